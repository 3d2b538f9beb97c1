#include "loginson/config.hpp"
#include "loginson/error.hpp"
#include "loginson/receptor/receptor.hpp"
#include "tool_util.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Summary receptor: indexes pipeline output and serves it over HTTP"};
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    CLI11_PARSE(app, argc, argv);

    const auto signals = loginson::tools::block_shutdown_signals();
    try {
        auto config = loginson::receptor::ReceptorConfig::from_json(loginson::load_json_file(config_path));
        loginson::receptor::Receptor receptor(std::move(config));
        receptor.start();
        std::cout << "receptor: ingest on " << receptor.ingest_port() << ", HTTP on " << receptor.http_port()
                  << std::endl;
        loginson::tools::wait_for_shutdown(signals);
        receptor.stop();
        std::cout << receptor.stats_json().dump() << std::endl;
    } catch (const loginson::Error& e) {
        std::cerr << "receptor: " << to_string(e.code()) << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
