#include "loginson/dbnode/server.hpp"

#include "loginson/config.hpp"
#include "loginson/error.hpp"

#include <sys/socket.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <iostream>

namespace loginson::dbnode {

NodeConfig NodeConfig::from_json(const nlohmann::json& j) {
    NodeConfig c;
    c.bind_host = j.value("bind_host", c.bind_host);
    c.listen_port = j.value("listen_port", c.listen_port);
    c.control_port = j.value("control_port", c.control_port);
    c.store.data_dir = j.at("data_dir").get<std::string>();
    c.store.segment_bytes = j.value("segment_bytes", c.store.segment_bytes);
    c.store.buffer_pool = j.value("buffer_pool", c.store.buffer_pool);
    c.store.utilization_cap = j.value("utilization_cap", c.store.utilization_cap);
    c.store.max_write_bytes_per_s = j.value("max_write_bytes_per_s", c.store.max_write_bytes_per_s);
    c.store.device_bytes_per_s = j.value("device_bytes_per_s", c.store.device_bytes_per_s);
    c.store.min_read_share = j.value("min_read_share", c.store.min_read_share);
    c.store.idle_flush = std::chrono::milliseconds(j.value("idle_flush_ms", c.store.idle_flush.count()));
    c.store.sync_writes = j.value("sync_writes", c.store.sync_writes);
    c.calibrate = j.value("calibrate", c.calibrate);
    c.registry = TypeRegistry::from_json(j.value("type_rules", nlohmann::json::array()));
    if (j.contains("pipeline_config")) {
        c.pipelines = pipeline::load_pipeline_specs(load_json_file(j.at("pipeline_config").get<std::string>()));
    } else if (j.contains("pipelines")) {
        c.pipelines = pipeline::load_pipeline_specs(j);
    }
    for (auto& spec : c.pipelines) {
        const auto id = c.registry.id_of(spec.type_name);
        if (!id) throw Error(Errc::UnknownType, "pipeline type '" + spec.type_name + "' has no type rule");
        spec.type_id = *id;
    }
    if (j.contains("receptor") && !j.at("receptor").is_null()) {
        c.receptor = net::Endpoint::parse(j.at("receptor").get<std::string>());
    }
    c.tee_capacity = j.value("tee_capacity", c.tee_capacity);
    c.window_grace = std::chrono::milliseconds(j.value("window_grace_ms", c.window_grace.count()));
    if (c.store.segment_bytes < kHeaderSize) throw Error(Errc::InvalidConfig, "segment_bytes too small");
    if (c.store.buffer_pool < 2) throw Error(Errc::InvalidConfig, "buffer_pool must be >= 2");
    return c;
}

NodeServer::NodeServer(NodeConfig config) : config_(std::move(config)) {
    if (config_.calibrate && config_.store.max_write_bytes_per_s <= 0) {
        std::unique_ptr<TokenBucket> device;
        if (config_.store.device_bytes_per_s > 0) {
            device = std::make_unique<TokenBucket>(config_.store.device_bytes_per_s, 1 << 20);
        }
        std::filesystem::create_directories(config_.store.data_dir);
        const auto size = std::min<std::size_t>(config_.store.segment_bytes, 64u << 20);
        config_.store.max_write_bytes_per_s =
            calibrate_write_speed(config_.store.data_dir, size, config_.store.write_chunk_bytes, device.get(), 2,
                                  config_.store.sync_writes);
        std::cerr << "dbnode: calibrated W_max = " << config_.store.max_write_bytes_per_s / 1e6 << " MB/s\n";
    }
    store_ = std::make_unique<SegmentStore>(config_.store);
    for (const auto& spec : config_.pipelines) spec_by_type_[spec.type_id] = &spec;
    if (!config_.pipelines.empty()) {
        pipeline::LineFn out = [](std::string_view) {};
        if (config_.receptor) {
            live_receptor_ = std::make_unique<pipeline::ReceptorClient>(*config_.receptor);
            out = [client = live_receptor_.get()](std::string_view line) { client->send(line); };
        }
        dispatcher_ = std::make_unique<pipeline::PipelineDispatcher>(config_.pipelines, std::move(out),
                                                                     config_.tee_capacity, config_.window_grace);
    }
}

NodeServer::~NodeServer() { stop(); }

void NodeServer::start() {
    if (running_.exchange(true)) return;
    ingest_listener_ = std::make_unique<net::TcpListener>(net::Endpoint{config_.bind_host, config_.listen_port});
    control_listener_ = std::make_unique<net::TcpListener>(net::Endpoint{config_.bind_host, config_.control_port});
    ingest_port_ = ingest_listener_->port();
    control_port_ = control_listener_->port();
    ingest_acceptor_ = std::thread([this] { ingest_accept_loop(); });
    control_acceptor_ = std::thread([this] { control_accept_loop(); });
}

void NodeServer::stop() {
    if (!running_.exchange(false)) {
        if (store_) store_->close();
        return;
    }
    if (ingest_acceptor_.joinable()) ingest_acceptor_.join();
    if (control_acceptor_.joinable()) control_acceptor_.join();
    std::vector<Connection> threads;
    {
        std::lock_guard lock(mu_);
        for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
        for (auto& [_, token] : scans_) token->store(true);
        threads.swap(threads_);
    }
    for (auto& c : threads) c.thread.join();
    if (dispatcher_) {
        dispatcher_->drain(true, std::chrono::seconds(5));
        dispatcher_->stop();
    }
    store_->close();
}

void NodeServer::set_scan_observer(std::function<void(const std::string&, std::size_t)> fn) {
    std::lock_guard lock(mu_);
    scan_observer_ = std::move(fn);
}

void NodeServer::spawn_connection(net::TcpStream stream, std::function<void(net::TcpStream)> serve) {
    std::lock_guard lock(mu_);
    for (auto it = threads_.begin(); it != threads_.end();) {
        if (it->done->load()) {
            it->thread.join();
            it = threads_.erase(it);
        } else {
            ++it;
        }
    }
    open_fds_.push_back(stream.fd());
    auto done = std::make_shared<std::atomic<bool>>(false);
    threads_.push_back({std::thread([serve = std::move(serve), done, st = std::move(stream)]() mutable {
                            serve(std::move(st));
                            done->store(true);
                        }),
                        done});
}

void NodeServer::untrack(int fd) {
    std::lock_guard lock(mu_);
    open_fds_.erase(std::remove(open_fds_.begin(), open_fds_.end(), fd), open_fds_.end());
}

void NodeServer::ingest_accept_loop() {
    while (running_.load()) {
        auto s = ingest_listener_->accept(std::chrono::milliseconds(50));
        if (!s) continue;
        ingest_connections_.fetch_add(1);
        spawn_connection(std::move(*s), [this](net::TcpStream st) { serve_ingest(std::move(st)); });
    }
    ingest_listener_->close();
}

void NodeServer::serve_ingest(net::TcpStream stream) {
    const int fd = stream.fd();
    stream.set_recv_buffer(4 << 20);
    std::vector<std::uint8_t> buf(1 << 20);
    std::vector<RecordView> views;
    std::size_t have = 0;
    std::uint64_t acked = 0;
    try {
        while (running_.load()) {
            if (have == buf.size()) buf.resize(buf.size() * 2);
            const std::size_t n = stream.read_some(std::span<std::uint8_t>(buf.data() + have, buf.size() - have));
            if (n == 0) break;
            have += n;
            FrameCursor cur(std::span<const std::uint8_t>(buf.data(), have));
            views.clear();
            while (auto rv = cur.next()) views.push_back(*rv);
            const std::size_t used = cur.offset();
            if (!views.empty()) {
                store_->append_batch(std::span<const std::uint8_t>(buf.data(), used));
                if (dispatcher_) {
                    for (const auto& v : views) dispatcher_->offer(v);
                }
                acked += views.size();
                ingested_.fetch_add(views.size());
                std::uint8_t ack[8];
                for (int i = 0; i < 8; ++i) ack[i] = static_cast<std::uint8_t>(acked >> (8 * i));
                stream.write_all(std::span<const std::uint8_t>(ack, 8));
            }
            std::memmove(buf.data(), buf.data() + used, have - used);
            have -= used;
        }
    } catch (const Error& e) {
        if (e.code() != Errc::SocketError) {
            bad_frames_.fetch_add(1);
            std::cerr << "dbnode: closing ingest connection: " << e.what() << "\n";
        }
    }
    untrack(fd);
}

void NodeServer::control_accept_loop() {
    while (running_.load()) {
        auto s = control_listener_->accept(std::chrono::milliseconds(50));
        if (!s) continue;
        spawn_connection(std::move(*s), [this](net::TcpStream st) { serve_control(std::move(st)); });
    }
    control_listener_->close();
}

namespace {

nlohmann::json failure(const Error& e) {
    return {{"ok", false}, {"error", to_string(e.code())}, {"message", e.what()}};
}

Interval interval_of(const nlohmann::json& req) {
    Interval q{req.at("from_ts_ns").get<std::uint64_t>(), req.at("to_ts_ns").get<std::uint64_t>()};
    if (q.from_ts_ns > q.to_ts_ns) throw Error(Errc::InvalidInterval, "from_ts_ns > to_ts_ns");
    return q;
}

} // namespace

void NodeServer::serve_control(net::TcpStream stream) {
    const int fd = stream.fd();
    try {
        while (running_.load()) {
            auto req = net::read_message(stream);
            if (!req) break;
            const std::string op = req->value("op", std::string());
            try {
                if (op == "PING") {
                    net::write_message(stream, {{"ok", true}, {"healthy", store_->stats().healthy}});
                } else if (op == "LOOKUP") {
                    nlohmann::json segs = nlohmann::json::array();
                    for (const auto& e : store_->lookup_segments(interval_of(*req), req->value("type_id", 0u))) {
                        segs.push_back({{"id", e.segment_id},
                                        {"min_ts_ns", e.min_ts_ns},
                                        {"max_ts_ns", e.max_ts_ns},
                                        {"records", e.record_count},
                                        {"bytes", e.byte_size}});
                    }
                    net::write_message(stream, {{"ok", true}, {"segments", segs}});
                } else if (op == "SCAN") {
                    run_scan(stream, *req);
                } else if (op == "CANCEL") {
                    bool found = false;
                    {
                        std::lock_guard lock(mu_);
                        const auto it = scans_.find(req->at("query_id").get<std::string>());
                        if (it != scans_.end()) {
                            it->second->store(true);
                            found = true;
                        }
                    }
                    net::write_message(stream, {{"ok", true}, {"found", found}});
                } else if (op == "STATS") {
                    auto s = stats_json();
                    s["ok"] = true;
                    net::write_message(stream, s);
                } else {
                    net::write_message(stream, {{"ok", false}, {"error", "InvalidConfig"}, {"message", "unknown op " + op}});
                }
            } catch (const Error& e) {
                if (e.code() == Errc::SocketError) throw;
                net::write_message(stream, failure(e));
            } catch (const nlohmann::json::exception& e) {
                net::write_message(stream, failure(Error(Errc::MalformedDoc, e.what())));
            }
        }
    } catch (const std::exception&) {
        // Peer went away or sent garbage; drop the connection.
    }
    untrack(fd);
}

void NodeServer::run_scan(net::TcpStream& stream, const nlohmann::json& req) {
    const std::string query_id = req.at("query_id").get<std::string>();
    const Interval q = interval_of(req);
    const std::uint32_t type_id = req.value("type_id", 0u);
    const bool stream_mode = req.value("deliver", std::string("replay")) == "stream";

    auto token = make_cancel_token();
    {
        std::lock_guard lock(mu_);
        scans_[query_id] = token;
    }
    scans_total_.fetch_add(1);
    struct Unregister {
        NodeServer* self;
        const std::string& id;
        ~Unregister() {
            std::lock_guard lock(self->mu_);
            self->scans_.erase(id);
        }
    } unregister{this, query_id};

    const auto entries = store_->lookup_segments(q, type_id);
    net::write_message(stream, {{"event", "accepted"}, {"segments", entries.size()}});

    // Replay: one fresh pipeline per type, output to the receptor under a
    // per-query index name.
    std::unique_ptr<pipeline::ReceptorClient> client;
    if (!stream_mode && config_.receptor) {
        client = std::make_unique<pipeline::ReceptorClient>(*config_.receptor, true, std::chrono::seconds(5));
    }
    std::atomic<std::uint64_t> replay_lines{0};
    std::atomic<bool> receptor_failed{false};
    pipeline::LineFn out = [&](std::string_view line) {
        replay_lines.fetch_add(1);
        if (client && !receptor_failed.load() && !client->send(line)) {
            receptor_failed = true;
            std::cerr << "dbnode: query " << query_id << ": receptor unreachable, replay output dropped\n";
        }
    };
    std::map<std::uint32_t, std::unique_ptr<pipeline::Pipeline>> replays;
    std::uint64_t unrouted = 0;

    std::vector<std::uint8_t> chunk;
    auto flush_chunk = [&] {
        if (chunk.empty()) return;
        net::write_message(stream, {{"event", "records"}, {"bytes", chunk.size()}});
        stream.write_all(std::span<const std::uint8_t>(chunk));
        chunk.clear();
    };

    std::function<void(const std::string&, std::size_t)> observer;
    {
        std::lock_guard lock(mu_);
        observer = scan_observer_;
    }

    auto on_record = [&](const RecordView& v) {
        if (stream_mode) {
            chunk.insert(chunk.end(), v.frame.begin(), v.frame.end());
            if (chunk.size() >= (256u << 10)) {
                try {
                    flush_chunk();
                } catch (const Error&) {
                    token->store(true);
                }
            }
            return;
        }
        auto it = replays.find(v.header.type_id);
        if (it == replays.end()) {
            const auto spec = spec_by_type_.find(v.header.type_id);
            if (spec == spec_by_type_.end()) {
                ++unrouted;
                return;
            }
            it = replays
                     .emplace(v.header.type_id,
                              std::make_unique<pipeline::Pipeline>(
                                  *spec->second, spec->second->index_name + "-q" + query_id, out))
                     .first;
        }
        it->second->process(v.header.ingest_ts_ns, v.payload);
    };
    auto on_segment = [&](std::size_t scanned, std::size_t total, std::uint64_t records) {
        try {
            if (stream_mode) flush_chunk();
            net::write_message(stream, {{"event", "progress"}, {"scanned", scanned}, {"total", total}, {"records", records}});
        } catch (const Error&) {
            token->store(true); // the caller is gone
        }
        if (observer) observer(query_id, scanned);
    };

    const ScanResult res = store_->scan_segments(entries, q, type_id, token, on_record, on_segment);
    if (res.status == ScanStatus::Done) {
        for (auto& [_, p] : replays) p->finish();
        if (stream_mode) flush_chunk();
    }
    replays.clear();
    net::write_message(stream, {{"event", "done"},
                                {"status", to_string(res.status)},
                                {"records", res.records},
                                {"segments_scanned", res.segments_scanned},
                                {"replay_lines", replay_lines.load()},
                                {"unrouted", unrouted},
                                {"receptor_failed", receptor_failed.load()},
                                {"error", res.error}});
}

nlohmann::json NodeServer::stats_json() const {
    const auto s = store_->stats();
    nlohmann::json j{{"records_ingested", ingested_.load()},
                     {"ingest_connections", ingest_connections_.load()},
                     {"bad_frames", bad_frames_.load()},
                     {"scans_total", scans_total_.load()},
                     {"records_appended", s.records_appended},
                     {"bytes_appended", s.bytes_appended},
                     {"bytes_flushed", s.bytes_flushed},
                     {"segments_flushed", s.segments_flushed},
                     {"records_rejected", s.records_rejected},
                     {"flush_failures", s.flush_failures},
                     {"buffers_pending", s.buffers_pending},
                     {"healthy", s.healthy},
                     {"max_write_bytes_per_s", config_.store.max_write_bytes_per_s},
                     {"utilization_cap", config_.store.utilization_cap}};
    {
        std::lock_guard lock(mu_);
        j["scans_active"] = scans_.size();
    }
    nlohmann::json pipes = nlohmann::json::array();
    if (dispatcher_) {
        for (const auto& e : dispatcher_->stats()) {
            pipes.push_back({{"type", e.type_name},
                             {"offered", e.offered},
                             {"tee_dropped", e.tee_dropped},
                             {"queued", e.queued},
                             {"processed", e.pipeline.processed},
                             {"filtered_out", e.pipeline.filtered_out},
                             {"late", e.pipeline.late},
                             {"emitted", e.pipeline.emitted},
                             {"external_disabled", e.external_disabled}});
        }
        j["pipeline_unrouted"] = dispatcher_->unrouted();
    }
    j["pipelines"] = pipes;
    if (live_receptor_) {
        j["receptor_sent"] = live_receptor_->sent();
        j["receptor_dropped"] = live_receptor_->dropped();
    }
    return j;
}

} // namespace loginson::dbnode
