#include "loginson/config.hpp"
#include "loginson/dbnode/server.hpp"
#include "loginson/error.hpp"
#include "tool_util.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Storage node: append-only segment files, scans and pipelines"};
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    CLI11_PARSE(app, argc, argv);

    const auto signals = loginson::tools::block_shutdown_signals();
    try {
        auto config = loginson::dbnode::NodeConfig::from_json(loginson::load_json_file(config_path));
        loginson::dbnode::NodeServer node(std::move(config));
        node.start();
        std::cout << "dbnode: ingest on " << node.ingest_port() << ", control on " << node.control_port() << std::endl;
        loginson::tools::wait_for_shutdown(signals);
        std::cout << "dbnode: shutting down" << std::endl;
        node.stop();
        std::cout << node.stats_json().dump() << std::endl;
    } catch (const loginson::Error& e) {
        std::cerr << "dbnode: " << to_string(e.code()) << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
