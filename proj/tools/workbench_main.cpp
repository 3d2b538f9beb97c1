#include "loginson/config.hpp"
#include "loginson/dbnode/rpc.hpp"
#include "loginson/error.hpp"
#include "loginson/workbench/bench.hpp"
#include "loginson/workbench/capacity.hpp"
#include "loginson/workbench/generator.hpp"
#include "loginson/workbench/manifest.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>

using namespace loginson;
using namespace loginson::workbench;

namespace {

nlohmann::json manifest_json(const Manifest& m) {
    return {{"count", m.count}, {"sum", m.sum}, {"xor", m.xor_}, {"bytes", m.bytes}, {"digest", m.to_string()}};
}

Manifest manifest_from(const nlohmann::json& j) {
    Manifest m;
    m.count = j.at("count").get<std::uint64_t>();
    m.sum = j.at("sum").get<std::uint64_t>();
    m.xor_ = j.at("xor").get<std::uint64_t>();
    m.bytes = j.at("bytes").get<std::uint64_t>();
    return m;
}

LoadProfile profile_from(const std::string& config_path) {
    if (config_path.empty()) return LoadProfile{};
    const auto j = load_json_file(config_path);
    return LoadProfile::from_json(j.contains("profile") ? j.at("profile") : j);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Load generation, measurement and capacity planning"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config with a load profile (mode, size, quantiles, rate, count, "
                                            "duration_s, seed)")
        ->check(CLI::ExistingFile);

    auto* gen = app.add_subcommand("gen", "Send synthetic log lines over UDP and print the manifest");
    std::string target;
    std::optional<double> rate, duration;
    std::optional<std::uint64_t> count, seed;
    std::optional<std::size_t> fixed;
    std::string manifest_out;
    gen->add_option("--target", target, "feeder UDP endpoint host:port")->required();
    gen->add_option("--rate", rate, "lines per second, 0 = unlimited");
    gen->add_option("--count", count, "number of lines");
    gen->add_option("--duration", duration, "seconds to run");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--fixed", fixed, "fixed line size in bytes instead of the empirical model");
    gen->add_option("--manifest-out", manifest_out, "write the manifest as JSON");

    auto* bench = app.add_subcommand("bench", "Run feeder -> sinks on loopback and record 100 ms throughput");
    BenchOptions bo;
    std::string csv;
    bool direct = false;
    std::size_t line_size = 291;
    bench->add_option("--workers", bo.header_workers, "header workers")->capture_default_str();
    bench->add_option("--nodes", bo.nodes, "sink count")->capture_default_str();
    bench->add_option("--duration", bo.duration_s, "seconds")->capture_default_str();
    bench->add_option("--size", line_size, "fixed line size")->capture_default_str();
    double bench_rate = 0;
    bench->add_option("--rate", bench_rate, "lines per second, 0 = unlimited")->capture_default_str();
    bench->add_option("--csv", csv, "throughput CSV output");
    bench->add_option("--ring-slots", bo.ring_slots, "feeder ring slots")->capture_default_str();
    bench->add_option("--slot-bytes", bo.slot_bytes, "feeder slot size")->capture_default_str();
    bench->add_flag("--direct", direct, "hand datagrams to the feeder in-process instead of UDP");
    bench->add_option("--datagram-bytes", bo.max_datagram_bytes, "largest datagram the generator sends")->capture_default_str();

    auto* plan = app.add_subcommand("plan", "Drives needed for a sustained ingest rate");
    CapacityModel model;
    model.drive_bytes_per_s = 160e6;
    plan->add_option("--records-per-s", model.records_per_s, "R")->required();
    plan->add_option("--payload-bytes", model.payload_bytes, "S")->required();
    plan->add_option("--header-bytes", model.header_bytes, "H")->capture_default_str();
    plan->add_option("--drive-bytes-per-s", model.drive_bytes_per_s, "W_max")->capture_default_str();
    plan->add_option("--utilization", model.utilization_cap, "U")->capture_default_str();

    auto* verify = app.add_subcommand("verify", "Read every stored record back from the nodes and compare manifests");
    std::vector<std::string> nodes;
    std::string manifest_in;
    std::uint64_t from = 0, to = UINT64_MAX;
    verify->add_option("--nodes", nodes, "node control endpoints host:port")->required();
    verify->add_option("--manifest", manifest_in, "manifest JSON written by gen")->required()->check(CLI::ExistingFile);
    verify->add_option("--from-ts-ns", from);
    verify->add_option("--to-ts-ns", to);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            LoadProfile p = profile_from(config_path);
            if (rate) p.rate = *rate;
            if (count) p.count = *count;
            if (duration) p.duration_s = *duration;
            if (seed) p.seed = *seed;
            if (fixed) {
                p.mode = LoadProfile::Mode::Fixed;
                p.fixed_size = *fixed;
            }
            const auto res = generate_load(p, net::Endpoint::parse(target));
            auto out = manifest_json(res.manifest);
            out["lines"] = res.lines;
            out["datagrams"] = res.datagrams;
            out["elapsed_s"] = res.elapsed_s;
            out["achieved_rate"] = res.achieved_rate();
            std::cout << out.dump() << std::endl;
            if (!manifest_out.empty()) std::ofstream(manifest_out) << out.dump(2) << '\n';
        } else if (*bench) {
            if (!config_path.empty()) bo.profile = profile_from(config_path);
            bo.profile.mode = LoadProfile::Mode::Fixed;
            bo.profile.fixed_size = line_size;
            bo.profile.rate = bench_rate;
            bo.udp = !direct;
            bo.csv_path = csv;
            const auto r = run_feeder_bench(bo);
            std::cout << "windows=" << r.summary.windows << " mean_per_100ms=" << r.summary.mean
                      << " median=" << r.summary.median << " stddev=" << r.summary.stddev << " cv=" << r.summary.cv()
                      << " records_per_s=" << r.records_per_s() << " sent=" << r.lines_sent
                      << " stored=" << r.records_stored << std::endl;
        } else if (*plan) {
            std::cout << plan_capacity(model) << std::endl;
        } else if (*verify) {
            std::ifstream in(manifest_in);
            const Manifest expected = manifest_from(nlohmann::json::parse(in));
            Manifest got;
            for (const auto& n : nodes) {
                const dbnode::NodeClient client(net::Endpoint::parse(n));
                std::uint64_t records = 0;
                dbnode::ScanRequest req{"verify-" + n, {from, to}, 0, true};
                const auto report = client.scan(req, {}, [&](std::span<const std::uint8_t> framed) {
                    for (const auto& rv : decode_all(framed)) {
                        got.add(rv.payload);
                        ++records;
                    }
                });
                std::cout << n << ": " << records << " records (" << report.status << ")" << std::endl;
            }
            std::cout << "expected " << expected.to_string() << "\nstored   " << got.to_string() << std::endl;
            if (!(got == expected)) {
                std::cout << "MISMATCH" << std::endl;
                return 2;
            }
            std::cout << "OK" << std::endl;
        }
    } catch (const Error& e) {
        std::cerr << "workbench: " << to_string(e.code()) << ": " << e.what() << '\n';
        return 1;
    }
    return 0;
}
