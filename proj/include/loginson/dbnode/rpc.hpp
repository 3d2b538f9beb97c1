#pragma once

#include "loginson/net.hpp"
#include "loginson/record.hpp"

#include "json.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace loginson::dbnode {

/// Control messages are length-prefixed JSON objects with an "op" field:
///
///   PING                                   -> {"ok":true,"healthy":bool}
///   LOOKUP {from_ts_ns,to_ts_ns,type_id}   -> {"ok":true,"segments":[...]}
///   SCAN {query_id,from_ts_ns,to_ts_ns,type_id,deliver}
///        -> {"event":"accepted","segments":N}
///           {"event":"progress","scanned":i,"total":N,"records":r}...
///           {"event":"done","status":"DONE|CANCELLED|FAILED","records":r,
///            "segments_scanned":i,"error":"..."}
///   CANCEL {query_id}                      -> {"ok":true,"found":bool}
///   STATS                                  -> node statistics
///
/// deliver is "replay" (records go through the node's pipelines to the
/// receptor) or "stream" (each chunk of matches is sent to the caller as
/// {"event":"records","bytes":n} followed by n bytes of framed records).
/// Failures answer {"ok":false,"error":"<Errc>","message":"..."}.

struct SegmentInfo {
    std::uint64_t segment_id = 0;
    std::uint64_t min_ts_ns = 0;
    std::uint64_t max_ts_ns = 0;
    std::uint64_t records = 0;
    std::uint64_t bytes = 0;
};

struct ScanReport {
    std::string status; // DONE | CANCELLED | FAILED
    std::uint64_t records = 0;
    std::size_t segments_total = 0;
    std::size_t segments_scanned = 0;
    std::uint64_t replay_lines = 0;
    std::string error;
};

struct ScanRequest {
    std::string query_id;
    Interval interval;
    std::uint32_t type_id = 0;
    bool stream = false;
};

class NodeClient {
public:
    explicit NodeClient(net::Endpoint control, std::chrono::milliseconds connect_timeout = std::chrono::seconds(2));

    /// One request, one reply, on a fresh connection. Throws Error{NodeUnreachable}.
    nlohmann::json call(const nlohmann::json& request) const;

    bool ping() const;
    std::vector<SegmentInfo> lookup(const Interval& q, std::uint32_t type_id) const;
    bool cancel(const std::string& query_id) const;
    nlohmann::json stats() const;

    using ProgressFn = std::function<void(std::size_t scanned, std::size_t total, std::uint64_t records)>;
    using RecordsFn = std::function<void(std::span<const std::uint8_t> framed)>;
    /// Blocks until the node reports done. Throws Error{NodeUnreachable} when
    /// the connection fails before that.
    ScanReport scan(const ScanRequest& req, const ProgressFn& on_progress = {},
                    const RecordsFn& on_records = {}) const;

    const net::Endpoint& endpoint() const noexcept { return ep_; }

private:
    net::Endpoint ep_;
    std::chrono::milliseconds timeout_;
};

} // namespace loginson::dbnode
