#include "loginson/dbnode/rpc.hpp"

#include "loginson/error.hpp"

namespace loginson::dbnode {

namespace {

net::TcpStream open(const net::Endpoint& ep, std::chrono::milliseconds timeout) {
    try {
        return net::TcpStream::connect(ep, timeout);
    } catch (const Error& e) {
        throw Error(Errc::NodeUnreachable, ep.to_string() + ": " + e.what());
    }
}

void check(const nlohmann::json& reply, const net::Endpoint& ep) {
    if (reply.value("ok", true)) return;
    const auto code = reply.value("error", std::string("NodeUnreachable"));
    const auto msg = ep.to_string() + ": " + reply.value("message", std::string());
    if (code == "InvalidInterval") throw Error(Errc::InvalidInterval, msg);
    throw Error(Errc::NodeUnreachable, msg);
}

} // namespace

NodeClient::NodeClient(net::Endpoint control, std::chrono::milliseconds connect_timeout)
    : ep_(std::move(control)), timeout_(connect_timeout) {}

nlohmann::json NodeClient::call(const nlohmann::json& request) const {
    auto s = open(ep_, timeout_);
    try {
        net::write_message(s, request);
        auto reply = net::read_message(s);
        if (!reply) throw Error(Errc::NodeUnreachable, ep_.to_string() + ": connection closed");
        check(*reply, ep_);
        return *reply;
    } catch (const Error& e) {
        if (e.code() == Errc::SocketError || e.code() == Errc::Truncated) {
            throw Error(Errc::NodeUnreachable, ep_.to_string() + ": " + e.what());
        }
        throw;
    }
}

bool NodeClient::ping() const {
    try {
        return call({{"op", "PING"}}).value("ok", false);
    } catch (const Error&) {
        return false;
    }
}

std::vector<SegmentInfo> NodeClient::lookup(const Interval& q, std::uint32_t type_id) const {
    const auto reply =
        call({{"op", "LOOKUP"}, {"from_ts_ns", q.from_ts_ns}, {"to_ts_ns", q.to_ts_ns}, {"type_id", type_id}});
    std::vector<SegmentInfo> out;
    for (const auto& s : reply.at("segments")) {
        out.push_back({s.at("id").get<std::uint64_t>(), s.at("min_ts_ns").get<std::uint64_t>(),
                       s.at("max_ts_ns").get<std::uint64_t>(), s.at("records").get<std::uint64_t>(),
                       s.at("bytes").get<std::uint64_t>()});
    }
    return out;
}

bool NodeClient::cancel(const std::string& query_id) const {
    return call({{"op", "CANCEL"}, {"query_id", query_id}}).value("found", false);
}

nlohmann::json NodeClient::stats() const { return call({{"op", "STATS"}}); }

ScanReport NodeClient::scan(const ScanRequest& req, const ProgressFn& on_progress, const RecordsFn& on_records) const {
    auto s = open(ep_, timeout_);
    ScanReport report;
    std::vector<std::uint8_t> chunk;
    try {
        net::write_message(s, {{"op", "SCAN"},
                               {"query_id", req.query_id},
                               {"from_ts_ns", req.interval.from_ts_ns},
                               {"to_ts_ns", req.interval.to_ts_ns},
                               {"type_id", req.type_id},
                               {"deliver", req.stream ? "stream" : "replay"}});
        for (;;) {
            auto msg = net::read_message(s);
            if (!msg) throw Error(Errc::NodeUnreachable, ep_.to_string() + ": scan connection closed");
            check(*msg, ep_);
            const auto event = msg->value("event", std::string());
            if (event == "accepted") {
                report.segments_total = msg->value("segments", std::size_t{0});
                if (on_progress) on_progress(0, report.segments_total, 0);
            } else if (event == "progress") {
                report.segments_scanned = msg->value("scanned", std::size_t{0});
                report.records = msg->value("records", std::uint64_t{0});
                if (on_progress) on_progress(report.segments_scanned, report.segments_total, report.records);
            } else if (event == "records") {
                chunk.resize(msg->at("bytes").get<std::size_t>());
                if (!s.read_exact(chunk)) throw Error(Errc::NodeUnreachable, ep_.to_string() + ": short record chunk");
                if (on_records) on_records(chunk);
            } else if (event == "done") {
                report.status = msg->value("status", std::string("FAILED"));
                report.records = msg->value("records", report.records);
                report.segments_scanned = msg->value("segments_scanned", report.segments_scanned);
                report.replay_lines = msg->value("replay_lines", std::uint64_t{0});
                report.error = msg->value("error", std::string());
                return report;
            }
        }
    } catch (const Error& e) {
        if (e.code() == Errc::SocketError || e.code() == Errc::Truncated) {
            throw Error(Errc::NodeUnreachable, ep_.to_string() + ": " + e.what());
        }
        throw;
    }
}

} // namespace loginson::dbnode
