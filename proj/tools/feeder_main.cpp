#include "loginson/config.hpp"
#include "loginson/error.hpp"
#include "loginson/feeder/feeder.hpp"
#include "tool_util.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"UDP log feeder: batches datagrams and fans records out to storage nodes"};
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    CLI11_PARSE(app, argc, argv);

    const auto signals = loginson::tools::block_shutdown_signals();
    try {
        auto config = loginson::feeder::FeederConfig::from_json(loginson::load_json_file(config_path));
        loginson::feeder::Feeder feeder(std::move(config));
        feeder.start();
        std::cout << "feeder: listening on UDP";
        for (auto p : feeder.udp_ports()) std::cout << ' ' << p;
        std::cout << std::endl;
        loginson::tools::wait_for_shutdown(signals);
        std::cout << "feeder: draining" << std::endl;
        feeder.stop();
        const auto& c = feeder.counters();
        std::cout << "feeder: records_in=" << c.records_in << " records_out=" << c.records_out
                  << " datagrams_dropped=" << c.datagrams_dropped << std::endl;
    } catch (const loginson::Error& e) {
        std::cerr << "feeder: " << to_string(e.code()) << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
