#include "loginson/config.hpp"
#include "loginson/control/controller.hpp"
#include "loginson/error.hpp"
#include "tool_util.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Drill-down query controller"};
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    CLI11_PARSE(app, argc, argv);

    const auto signals = loginson::tools::block_shutdown_signals();
    try {
        auto config = loginson::control::ControllerConfig::from_json(loginson::load_json_file(config_path));
        loginson::control::Controller controller(std::move(config));
        controller.start();
        std::cout << "controller: HTTP on " << controller.http_port() << std::endl;
        loginson::tools::wait_for_shutdown(signals);
        controller.stop();
    } catch (const loginson::Error& e) {
        std::cerr << "controller: " << to_string(e.code()) << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
