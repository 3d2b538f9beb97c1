#include "loginson/control/controller.hpp"

#include "loginson/error.hpp"

#include "httplib.h"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace loginson::control {

const char* to_string(QueryState s) noexcept {
    switch (s) {
    case QueryState::Queued: return "QUEUED";
    case QueryState::Running: return "RUNNING";
    case QueryState::Done: return "DONE";
    case QueryState::Cancelled: return "CANCELLED";
    case QueryState::Failed: return "FAILED";
    }
    return "?";
}

std::optional<QueryState> parse_state(std::string_view s) noexcept {
    for (auto st : {QueryState::Queued, QueryState::Running, QueryState::Done, QueryState::Cancelled,
                    QueryState::Failed}) {
        if (s == to_string(st)) return st;
    }
    return std::nullopt;
}

bool is_terminal(QueryState s) noexcept {
    return s == QueryState::Done || s == QueryState::Cancelled || s == QueryState::Failed;
}

bool legal_transition(QueryState from, QueryState to) noexcept {
    switch (from) {
    case QueryState::Queued: return to == QueryState::Running || to == QueryState::Cancelled;
    case QueryState::Running:
        return to == QueryState::Done || to == QueryState::Cancelled || to == QueryState::Failed;
    default: return false;
    }
}

double NodeProgress::fraction() const noexcept {
    if (total == 0) return status == "DONE" ? 1.0 : 0.0;
    return std::min(1.0, static_cast<double>(scanned) / static_cast<double>(total));
}

nlohmann::json DrillQuery::to_json() const {
    nlohmann::json nodes_json = nlohmann::json::array();
    double sum = 0;
    for (const auto& n : nodes) {
        sum += n.fraction();
        nodes_json.push_back({{"address", n.address},
                              {"scanned", n.scanned},
                              {"total", n.total},
                              {"records", n.records},
                              {"progress", n.fraction()},
                              {"status", n.status},
                              {"error", n.error}});
    }
    return {{"query_id", query_id},
            {"type", type_name},
            {"from_ts_ns", interval.from_ts_ns},
            {"to_ts_ns", interval.to_ts_ns},
            {"state", to_string(state)},
            {"partial", partial},
            {"created_at", created_at_ns},
            {"finished_at", finished_at_ns},
            {"progress", nodes.empty() ? 0.0 : sum / static_cast<double>(nodes.size())},
            {"nodes", nodes_json},
            {"error", error}};
}

ControllerConfig ControllerConfig::from_json(const nlohmann::json& j) {
    ControllerConfig c;
    if (j.contains("listen_addr")) {
        const auto ep = net::Endpoint::parse(j.at("listen_addr").get<std::string>());
        c.listen_host = ep.host;
        c.listen_port = ep.port;
    }
    for (const auto& n : j.value("nodes", nlohmann::json::array())) c.nodes.push_back(net::Endpoint::parse(n.get<std::string>()));
    c.max_concurrent = j.value("max_concurrent", c.max_concurrent);
    c.journal_path = j.value("journal_path", c.journal_path);
    if (j.contains("type_rules")) c.types = TypeRegistry::from_json(j.at("type_rules"));
    c.health_interval = std::chrono::milliseconds(j.value("health_interval_ms", c.health_interval.count()));
    if (c.max_concurrent == 0) throw Error(Errc::InvalidConfig, "max_concurrent must be at least 1");
    return c;
}

namespace {

std::string new_query_id() {
    static std::mutex mu;
    static std::mt19937_64 rng{std::random_device{}()};
    std::uint64_t hi, lo;
    {
        std::lock_guard lock(mu);
        hi = rng();
        lo = rng();
    }
    hi = (hi & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
    lo = (lo & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(8) << (hi >> 32) << '-' << std::setw(4) << ((hi >> 16) & 0xffff)
       << '-' << std::setw(4) << (hi & 0xffff) << '-' << std::setw(4) << (lo >> 48) << '-' << std::setw(12)
       << (lo & 0xffffffffffffULL);
    return os.str();
}

nlohmann::json journal_entry(const DrillQuery& q) {
    return {{"query_id", q.query_id},     {"type", q.type_name},
            {"type_id", q.type_id},       {"from_ts_ns", q.interval.from_ts_ns},
            {"to_ts_ns", q.interval.to_ts_ns}, {"state", to_string(q.state)},
            {"created_at", q.created_at_ns}, {"finished_at", q.finished_at_ns},
            {"partial", q.partial},       {"error", q.error},
            {"seq", q.seq}};
}

} // namespace

Controller::Controller(ControllerConfig config) : config_(std::move(config)) {
    for (const auto& ep : config_.nodes) health_.push_back({ep.to_string(), false, 0});
    recover();
}

Controller::~Controller() {
    stop();
    if (journal_) std::fclose(journal_);
}

void Controller::recover() {
    if (config_.journal_path.empty()) return;
    std::map<std::string, DrillQuery> loaded;
    {
        std::ifstream in(config_.journal_path);
        for (std::string line; std::getline(in, line);) {
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) continue;
            const auto state = parse_state(j.value("state", std::string()));
            if (!state) continue;
            DrillQuery q;
            q.query_id = j.value("query_id", std::string());
            q.type_name = j.value("type", std::string("*"));
            q.type_id = j.value("type_id", 0u);
            q.interval = {j.value("from_ts_ns", std::uint64_t{0}), j.value("to_ts_ns", std::uint64_t{0})};
            q.state = *state;
            q.created_at_ns = j.value("created_at", std::uint64_t{0});
            q.finished_at_ns = j.value("finished_at", std::uint64_t{0});
            q.partial = j.value("partial", false);
            q.error = j.value("error", std::string());
            q.seq = j.value("seq", std::uint64_t{0});
            loaded[q.query_id] = std::move(q);
        }
    }
    std::vector<DrillQuery*> order;
    for (auto& [id, q] : loaded) {
        for (const auto& h : health_) q.nodes.push_back(NodeProgress{h.address, 0, 0, 0, {}, {}});
        if (q.state == QueryState::Running) {
            q.state = QueryState::Failed;
            q.error = "controller restarted while the query was running";
            q.finished_at_ns = now_ns();
        }
        next_seq_ = std::max(next_seq_, q.seq + 1);
        order.push_back(&q);
    }
    std::sort(order.begin(), order.end(), [](const DrillQuery* a, const DrillQuery* b) { return a->seq < b->seq; });
    const std::string tmp = config_.journal_path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        for (const auto* q : order) {
            out << journal_entry(*q).dump() << '\n';
            if (q->state == QueryState::Queued) queue_.push_back(q->query_id);
        }
        if (!out) throw Error(Errc::IoError, "cannot write " + tmp);
    }
    fs::rename(tmp, config_.journal_path);
    queries_ = std::move(loaded);
    journal_ = std::fopen(config_.journal_path.c_str(), "ab");
    if (!journal_) throw Error(Errc::IoError, "cannot open " + config_.journal_path);
}

void Controller::journal_locked(const DrillQuery& q) {
    if (!journal_) return;
    const auto line = journal_entry(q).dump();
    std::fwrite(line.data(), 1, line.size(), journal_);
    std::fputc('\n', journal_);
    std::fflush(journal_);
}

void Controller::transition_locked(DrillQuery& q, QueryState to) {
    if (!legal_transition(q.state, to)) {
        throw Error(Errc::AlreadyTerminal,
                    std::string("illegal transition ") + to_string(q.state) + " -> " + to_string(to));
    }
    const auto from = q.state;
    q.state = to;
    if (is_terminal(to)) q.finished_at_ns = now_ns();
    journal_locked(q);
    if (listener_) listener_(q.query_id, from, to);
    cv_.notify_all();
}

void Controller::set_transition_listener(TransitionFn fn) {
    std::lock_guard lock(mu_);
    listener_ = std::move(fn);
}

void Controller::start(bool with_http) {
    {
        std::lock_guard lock(mu_);
        if (started_) return;
        started_ = true;
        stopping_ = false;
    }
    if (with_http) setup_http();
    scheduler_ = std::thread([this] { scheduler_loop(); });
    health_thread_ = std::thread([this] { health_loop(); });
}

void Controller::stop() {
    {
        std::lock_guard lock(mu_);
        if (!started_) return;
        started_ = false;
        stopping_ = true;
        for (auto& [_, flag] : cancel_requested_) flag = true;
    }
    cv_.notify_all();
    if (http_) {
        http_->stop();
        http_thread_.join();
        http_.reset();
    }
    scheduler_.join();
    health_thread_.join();
    for (auto& t : runners_) t.join();
    runners_.clear();
}

DrillQuery Controller::submit(const std::string& type_name, const Interval& interval) {
    if (interval.from_ts_ns > interval.to_ts_ns) throw Error(Errc::InvalidInterval, "from_ts_ns > to_ts_ns");
    std::uint32_t type_id = 0;
    if (type_name != "*") {
        const auto id = config_.types.id_of(type_name);
        if (!id) throw Error(Errc::UnknownType, "unknown type '" + type_name + "'");
        type_id = *id;
    }
    DrillQuery q;
    q.query_id = new_query_id();
    q.type_name = type_name;
    q.type_id = type_id;
    q.interval = interval;
    q.created_at_ns = now_ns();
    for (const auto& h : health_) q.nodes.push_back(NodeProgress{h.address, 0, 0, 0, {}, {}});
    std::lock_guard lock(mu_);
    q.seq = next_seq_++;
    journal_locked(q);
    queue_.push_back(q.query_id);
    queries_.emplace(q.query_id, q);
    cv_.notify_all();
    return q;
}

DrillQuery Controller::cancel(const std::string& query_id, bool* already_terminal) {
    std::unique_lock lock(mu_);
    const auto it = queries_.find(query_id);
    if (it == queries_.end()) throw Error(Errc::NotFound, "no query '" + query_id + "'");
    DrillQuery& q = it->second;
    if (already_terminal) *already_terminal = is_terminal(q.state);
    if (is_terminal(q.state)) return q;
    if (q.state == QueryState::Queued) {
        queue_.erase(std::remove(queue_.begin(), queue_.end(), query_id), queue_.end());
        transition_locked(q, QueryState::Cancelled);
        return q;
    }
    cancel_requested_[query_id] = true;
    cv_.notify_all();
    cv_.wait_for(lock, config_.cancel_wait, [&] { return is_terminal(q.state); });
    return q;
}

DrillQuery Controller::get(const std::string& query_id) const {
    std::lock_guard lock(mu_);
    const auto it = queries_.find(query_id);
    if (it == queries_.end()) throw Error(Errc::NotFound, "no query '" + query_id + "'");
    return it->second;
}

std::vector<DrillQuery> Controller::list() const {
    std::vector<DrillQuery> out;
    {
        std::lock_guard lock(mu_);
        for (const auto& [_, q] : queries_) out.push_back(q);
    }
    std::sort(out.begin(), out.end(), [](const DrillQuery& a, const DrillQuery& b) { return a.seq < b.seq; });
    return out;
}

std::vector<NodeHealth> Controller::nodes() const {
    std::lock_guard lock(mu_);
    return health_;
}

std::optional<DrillQuery> Controller::wait(const std::string& query_id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    const auto it = queries_.find(query_id);
    if (it == queries_.end()) return std::nullopt;
    if (!cv_.wait_for(lock, timeout, [&] { return is_terminal(it->second.state); })) return std::nullopt;
    return it->second;
}

void Controller::scheduler_loop() {
    std::unique_lock lock(mu_);
    while (!stopping_) {
        cv_.wait(lock, [&] { return stopping_ || (!queue_.empty() && running_ < config_.max_concurrent); });
        if (stopping_) break;
        const std::string id = queue_.front();
        queue_.pop_front();
        transition_locked(queries_.at(id), QueryState::Running);
        ++running_;
        cancel_requested_[id] = false;
        runners_.emplace_back([this, id] { execute(id); });
    }
}

void Controller::health_loop() {
    std::unique_lock lock(mu_);
    while (!stopping_) {
        lock.unlock();
        std::vector<std::pair<bool, std::uint64_t>> seen;
        for (const auto& ep : config_.nodes) {
            const bool ok = dbnode::NodeClient(ep, std::chrono::milliseconds(500)).ping();
            seen.emplace_back(ok, ok ? now_ns() : 0);
        }
        lock.lock();
        for (std::size_t i = 0; i < seen.size(); ++i) {
            health_[i].connected = seen[i].first;
            if (seen[i].first) health_[i].last_seen_ns = seen[i].second;
        }
        cv_.wait_for(lock, config_.health_interval, [&] { return stopping_; });
    }
}

void Controller::execute(std::string id) {
    DrillQuery snap = get(id);
    const std::size_t n = config_.nodes.size();
    std::atomic<std::size_t> finished{0};
    std::atomic<bool> failed{false};
    std::vector<std::thread> workers;

    auto node_ref = [&](std::size_t i) -> NodeProgress& { return queries_.at(id).nodes.at(i); };
    for (std::size_t i = 0; i < n; ++i) {
        workers.emplace_back([&, i] {
            const dbnode::NodeClient client(config_.nodes[i]);
            try {
                const auto segments = client.lookup(snap.interval, snap.type_id);
                {
                    std::lock_guard lock(mu_);
                    node_ref(i).total = segments.size();
                }
                const auto report = client.scan(
                    {id, snap.interval, snap.type_id, false},
                    [&](std::size_t scanned, std::size_t total, std::uint64_t records) {
                        std::lock_guard lock(mu_);
                        auto& np = node_ref(i);
                        np.scanned = scanned;
                        np.total = total;
                        np.records = records;
                    });
                std::lock_guard lock(mu_);
                auto& np = node_ref(i);
                np.status = report.status;
                np.error = report.error;
                np.scanned = report.segments_scanned;
                np.records = report.records;
                if (report.status == "FAILED") failed = true;
            } catch (const Error& e) {
                std::lock_guard lock(mu_);
                auto& np = node_ref(i);
                np.status = "FAILED";
                np.error = e.what();
                failed = true;
            }
            finished.fetch_add(1);
            cv_.notify_all();
        });
    }

    // Cancellation is level-triggered: keep telling every node to stop until
    // all scans have returned, which also covers scans not yet registered.
    std::unique_lock lock(mu_);
    while (finished.load() < n) {
        cv_.wait_for(lock, std::chrono::milliseconds(100));
        if (finished.load() >= n) break;
        if (cancel_requested_[id] || failed.load()) {
            lock.unlock();
            for (const auto& ep : config_.nodes) {
                try {
                    dbnode::NodeClient(ep, std::chrono::milliseconds(500)).cancel(id);
                } catch (const Error&) {
                }
            }
            lock.lock();
        }
    }
    lock.unlock();
    for (auto& w : workers) w.join();
    lock.lock();

    DrillQuery& q = queries_.at(id);
    std::uint64_t records = 0;
    std::string errors;
    for (const auto& np : q.nodes) {
        records += np.records;
        if (np.status == "FAILED") errors += (errors.empty() ? "" : "; ") + np.address + ": " + np.error;
    }
    if (failed.load()) {
        q.error = errors;
        transition_locked(q, QueryState::Failed);
    } else if (cancel_requested_[id]) {
        q.partial = records > 0;
        transition_locked(q, QueryState::Cancelled);
    } else {
        transition_locked(q, QueryState::Done);
    }
    cancel_requested_.erase(id);
    --running_;
    cv_.notify_all();
}

namespace {

void reply_error(httplib::Response& res, const Error& e) {
    int status = 400;
    if (e.code() == Errc::NotFound) status = 404;
    res.status = status;
    res.set_content(nlohmann::json{{"error", to_string(e.code())}, {"message", e.what()}}.dump(), "application/json");
}

} // namespace

void Controller::setup_http() {
    http_ = std::make_unique<httplib::Server>();
    http_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    http_->Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    http_->Post("/queries", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object() || !body.contains("type") || !body.at("type").is_string() ||
                !body.contains("from_ts_ns") || !body.at("from_ts_ns").is_number_unsigned() ||
                !body.contains("to_ts_ns") || !body.at("to_ts_ns").is_number_unsigned()) {
                throw Error(Errc::MalformedDoc, "expected {\"type\",\"from_ts_ns\",\"to_ts_ns\"}");
            }
            const auto q = submit(body.at("type").get<std::string>(),
                                  {body.at("from_ts_ns").get<std::uint64_t>(), body.at("to_ts_ns").get<std::uint64_t>()});
            res.status = 202;
            res.set_content(nlohmann::json{{"query_id", q.query_id}, {"state", to_string(q.state)}}.dump(),
                            "application/json");
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });
    http_->Get("/queries", [this](const httplib::Request&, httplib::Response& res) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& q : list()) arr.push_back(q.to_json());
        res.set_content(nlohmann::json{{"queries", arr}}.dump(), "application/json");
    });
    http_->Get("/queries/:id", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            res.set_content(get(req.path_params.at("id")).to_json().dump(), "application/json");
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });
    http_->Delete("/queries/:id", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            bool already = false;
            auto j = cancel(req.path_params.at("id"), &already).to_json();
            if (already) j["result"] = "AlreadyTerminal";
            res.set_content(j.dump(), "application/json");
        } catch (const Error& e) {
            reply_error(res, e);
        }
    });
    http_->Get("/nodes", [this](const httplib::Request&, httplib::Response& res) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& h : nodes()) {
            arr.push_back({{"address", h.address},
                           {"connected", h.connected},
                           {"last_seen", h.last_seen_ns ? nlohmann::json(h.last_seen_ns) : nlohmann::json()}});
        }
        res.set_content(nlohmann::json{{"nodes", arr}}.dump(), "application/json");
    });
    if (config_.listen_port == 0) {
        http_port_ = static_cast<std::uint16_t>(http_->bind_to_any_port(config_.listen_host));
    } else if (http_->bind_to_port(config_.listen_host, config_.listen_port)) {
        http_port_ = config_.listen_port;
    }
    if (http_port_ == 0) throw Error(Errc::SocketError, "controller: cannot bind HTTP port");
    http_thread_ = std::thread([this] { http_->listen_after_bind(); });
}

} // namespace loginson::control
