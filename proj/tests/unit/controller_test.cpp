#include "loginson/control/controller.hpp"
#include "loginson/error.hpp"
#include "loginson/net.hpp"

#include "httplib.h"
#include "json.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <thread>

using namespace loginson;
using namespace loginson::control;
namespace fs = std::filesystem;

namespace {

/// Speaks the node control protocol with scripted segments. In gated mode a
/// segment completes only when the test releases a permit.
struct FakeNode {
    net::TcpListener listener{net::Endpoint{"127.0.0.1", 0}};
    std::size_t segments = 3;
    std::uint64_t records_per_segment = 10;
    std::atomic<bool> gated{true};
    std::chrono::milliseconds segment_delay{0};

    std::mutex mu;
    std::condition_variable cv;
    std::size_t permits = 0;
    std::set<std::string> cancelled;
    std::vector<std::string> scans_started;
    std::map<std::string, std::pair<std::string, std::size_t>> scan_results; // id -> status, scanned
    std::atomic<bool> stop{false};
    std::vector<std::thread> conns;
    std::thread acceptor;

    FakeNode() {
        acceptor = std::thread([this] {
            while (!stop) {
                auto s = listener.accept(std::chrono::milliseconds(20));
                if (!s) continue;
                std::lock_guard lock(mu);
                conns.emplace_back([this, st = std::move(*s)]() mutable { serve(st); });
            }
        });
    }
    ~FakeNode() {
        stop = true;
        cv.notify_all();
        acceptor.join();
        for (auto& t : conns) t.join();
    }
    net::Endpoint endpoint() const { return {"127.0.0.1", listener.port()}; }

    void release(std::size_t n = 1) {
        std::lock_guard lock(mu);
        permits += n;
        cv.notify_all();
    }
    std::vector<std::string> started() {
        std::lock_guard lock(mu);
        return scans_started;
    }

    void serve(net::TcpStream& s) {
        try {
            const auto req = net::read_message(s);
            if (!req) return;
            const auto op = req->value("op", std::string());
            if (op == "PING") {
                net::write_message(s, {{"ok", true}, {"healthy", true}});
            } else if (op == "LOOKUP") {
                nlohmann::json segs = nlohmann::json::array();
                for (std::size_t i = 0; i < segments; ++i) {
                    segs.push_back({{"id", i + 1}, {"min_ts_ns", 0}, {"max_ts_ns", 1}, {"records", 10}, {"bytes", 1}});
                }
                net::write_message(s, {{"ok", true}, {"segments", segs}});
            } else if (op == "CANCEL") {
                {
                    std::lock_guard lock(mu);
                    cancelled.insert(req->at("query_id").get<std::string>());
                }
                cv.notify_all();
                net::write_message(s, {{"ok", true}, {"found", true}});
            } else if (op == "SCAN") {
                scan(s, req->at("query_id").get<std::string>());
            }
        } catch (const Error&) {
        }
    }

    void scan(net::TcpStream& s, const std::string& id) {
        {
            std::lock_guard lock(mu);
            scans_started.push_back(id);
        }
        net::write_message(s, {{"event", "accepted"}, {"segments", segments}});
        std::size_t scanned = 0;
        std::string status = "DONE";
        for (; scanned < segments; ++scanned) {
            std::unique_lock lock(mu);
            if (gated) {
                cv.wait(lock, [&] { return stop || permits > 0 || cancelled.count(id); });
                if (cancelled.count(id) || stop) {
                    status = "CANCELLED";
                    break;
                }
                --permits;
            } else {
                cv.wait_for(lock, segment_delay, [&] { return stop || cancelled.count(id) > 0; });
                if (cancelled.count(id) || stop) {
                    status = "CANCELLED";
                    break;
                }
            }
            lock.unlock();
            net::write_message(s, {{"event", "progress"},
                                   {"scanned", scanned + 1},
                                   {"total", segments},
                                   {"records", (scanned + 1) * records_per_segment}});
        }
        {
            std::lock_guard lock(mu);
            scan_results[id] = {status, scanned};
        }
        net::write_message(s, {{"event", "done"},
                               {"status", status},
                               {"records", scanned * records_per_segment},
                               {"segments_scanned", scanned}});
    }
};

ControllerConfig config_for(std::vector<net::Endpoint> nodes) {
    ControllerConfig c;
    c.listen_host = "127.0.0.1";
    c.nodes = std::move(nodes);
    c.types = TypeRegistry({TypeRule{PrefixMatch{"apache:"}, 1, "apache_access"}});
    c.health_interval = std::chrono::milliseconds(100);
    return c;
}

template <class Pred>
bool eventually(Pred p, std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        if (p()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return p();
}

std::size_t count_state(const Controller& c, QueryState s) {
    std::size_t n = 0;
    for (const auto& q : c.list()) n += q.state == s;
    return n;
}

} // namespace

TEST(QueryState, TransitionTable) {
    using S = QueryState;
    const S all[] = {S::Queued, S::Running, S::Done, S::Cancelled, S::Failed};
    std::set<std::pair<S, S>> legal = {{S::Queued, S::Running},
                                       {S::Queued, S::Cancelled},
                                       {S::Running, S::Done},
                                       {S::Running, S::Cancelled},
                                       {S::Running, S::Failed}};
    for (S a : all) {
        for (S b : all) EXPECT_EQ(legal_transition(a, b), legal.count({a, b}) == 1) << to_string(a) << to_string(b);
    }
}

TEST(Controller, SubmitValidates) {
    FakeNode node;
    Controller c(config_for({node.endpoint()}));
    const auto q = c.submit("apache_access", {10, 20});
    EXPECT_EQ(q.state, QueryState::Queued);
    EXPECT_EQ(q.type_id, 1u);
    EXPECT_EQ(q.to_json().at("progress"), 0.0);
    EXPECT_EQ(q.query_id.size(), 36u);
    try {
        c.submit("*", {20, 10});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidInterval);
    }
    try {
        c.submit("nosuch", {1, 2});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnknownType);
    }
}

TEST(Controller, FiveSubmissionsOneRunning) {
    FakeNode node;
    Controller c(config_for({node.endpoint()}));
    c.start(false);
    std::vector<std::string> ids;
    for (int i = 0; i < 5; ++i) ids.push_back(c.submit("*", {0, 100}).query_id);
    ASSERT_TRUE(eventually([&] { return count_state(c, QueryState::Running) == 1; }));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    EXPECT_EQ(count_state(c, QueryState::Running), 1u);
    EXPECT_EQ(count_state(c, QueryState::Queued), 4u);
    EXPECT_EQ(c.get(ids[0]).state, QueryState::Running);
    node.release(1000);
    for (const auto& id : ids) ASSERT_TRUE(c.wait(id, std::chrono::seconds(5)));
    EXPECT_EQ(node.started(), ids);
    c.stop();
}

TEST(Controller, CancelQueuedRunningAndDone) {
    FakeNode node;
    Controller c(config_for({node.endpoint()}));
    c.start(false);
    const auto running = c.submit("*", {0, 100}).query_id;
    const auto queued = c.submit("*", {0, 100}).query_id;
    ASSERT_TRUE(eventually([&] { return c.get(running).state == QueryState::Running; }));

    bool already = true;
    EXPECT_EQ(c.cancel(queued, &already).state, QueryState::Cancelled);
    EXPECT_FALSE(already);

    node.release(1);
    ASSERT_TRUE(eventually([&] { return c.get(running).nodes.at(0).scanned == 1; }));
    const auto progress = c.get(running).nodes.at(0).fraction();
    EXPECT_NEAR(progress, 1.0 / 3.0, 0.01);

    const auto cancelled = c.cancel(running, &already);
    EXPECT_FALSE(already);
    EXPECT_EQ(cancelled.state, QueryState::Cancelled);
    EXPECT_TRUE(cancelled.partial);
    {
        std::lock_guard lock(node.mu);
        EXPECT_EQ(node.scan_results.at(running).first, "CANCELLED");
        EXPECT_EQ(node.scan_results.at(running).second, 1u);
    }
    EXPECT_EQ(node.started(), std::vector<std::string>{running});

    node.gated = false;
    const auto done = c.submit("*", {0, 100}).query_id;
    ASSERT_EQ(c.wait(done, std::chrono::seconds(5))->state, QueryState::Done);
    EXPECT_EQ(c.get(done).nodes.at(0).fraction(), 1.0);
    const auto again = c.cancel(done, &already);
    EXPECT_TRUE(already);
    EXPECT_EQ(again.state, QueryState::Done);
    EXPECT_FALSE(again.partial);
    EXPECT_THROW(c.cancel("missing"), Error);
    c.stop();
}

TEST(Controller, NodeDownFailsAndCancelsSurvivor) {
    FakeNode node;
    const net::Endpoint dead{"127.0.0.1", net::TcpListener(net::Endpoint{"127.0.0.1", 0}).port()};
    Controller c(config_for({node.endpoint(), dead}));
    c.start(false);
    const auto id = c.submit("*", {0, 100}).query_id;
    const auto q = c.wait(id, std::chrono::seconds(10));
    ASSERT_TRUE(q);
    EXPECT_EQ(q->state, QueryState::Failed);
    EXPECT_NE(q->error.find(dead.to_string()), std::string::npos);
    EXPECT_EQ(q->nodes.at(1).status, "FAILED");
    {
        std::lock_guard lock(node.mu);
        EXPECT_TRUE(node.cancelled.count(id));
    }
    EXPECT_TRUE(eventually([&] {
        std::lock_guard lock(node.mu);
        return node.scan_results.count(id) && node.scan_results.at(id).first == "CANCELLED";
    }));
    const auto health = c.nodes();
    ASSERT_EQ(health.size(), 2u);
    EXPECT_TRUE(eventually([&] { return c.nodes().at(0).connected; }));
    EXPECT_FALSE(c.nodes().at(1).connected);
    c.stop();
}

TEST(Controller, EmptyIntervalIsDone) {
    FakeNode node;
    node.segments = 0;
    Controller c(config_for({node.endpoint()}));
    c.start(false);
    const auto id = c.submit("*", {5, 5}).query_id;
    const auto q = c.wait(id, std::chrono::seconds(5));
    ASSERT_TRUE(q);
    EXPECT_EQ(q->state, QueryState::Done);
    EXPECT_EQ(q->nodes.at(0).records, 0u);
    EXPECT_EQ(q->nodes.at(0).total, 0u);
    EXPECT_EQ(q->to_json().at("progress"), 1.0);
    c.stop();
}

TEST(Controller, RandomInterleavingsKeepLegalTransitionsAndFifo) {
    FakeNode node;
    node.gated = false;
    node.segments = 2;
    node.segment_delay = std::chrono::milliseconds(2);
    Controller c(config_for({node.endpoint()}));
    std::mutex mu;
    std::map<std::string, QueryState> seen;
    std::vector<std::string> illegal;
    std::vector<std::string> completions;
    c.set_transition_listener([&](const std::string& id, QueryState from, QueryState to) {
        std::lock_guard lock(mu);
        const auto it = seen.find(id);
        const QueryState expected_from = it == seen.end() ? QueryState::Queued : it->second;
        if (from != expected_from || !legal_transition(from, to)) {
            illegal.push_back(id + " " + to_string(from) + "->" + to_string(to));
        }
        seen[id] = to;
        if (to == QueryState::Done) completions.push_back(id);
    });
    c.start(false);
    std::mt19937 rng(1234);
    std::vector<std::string> submitted;
    for (int round = 0; round < 100; ++round) {
        const int action = static_cast<int>(rng() % 3);
        if (action < 2 || submitted.empty()) {
            submitted.push_back(c.submit("*", {0, 100}).query_id);
        } else {
            const auto& victim = submitted[rng() % submitted.size()];
            const auto before = c.get(victim).state;
            bool already = false;
            const auto after = c.cancel(victim, &already);
            EXPECT_EQ(already, is_terminal(before) && after.state == before);
            EXPECT_TRUE(is_terminal(after.state));
        }
        EXPECT_LE(count_state(c, QueryState::Running), 1u);
        if (rng() % 4 == 0) std::this_thread::sleep_for(std::chrono::milliseconds(rng() % 10));
    }
    for (const auto& id : submitted) ASSERT_TRUE(c.wait(id, std::chrono::seconds(30)));
    c.stop();
    std::lock_guard lock(mu);
    EXPECT_TRUE(illegal.empty()) << illegal.front();
    std::vector<std::string> expected;
    for (const auto& id : submitted) {
        if (c.get(id).state == QueryState::Done) expected.push_back(id);
    }
    EXPECT_EQ(completions, expected);
    EXPECT_FALSE(expected.empty());
}

TEST(Controller, JournalRecoversQueuedAndFailsRunning) {
    FakeNode node;
    node.gated = false;
    const fs::path journal = fs::temp_directory_path() / ("loginson-journal-" + std::to_string(::getpid()));
    {
        std::ofstream out(journal, std::ios::trunc);
        out << R"({"query_id":"a","type":"*","type_id":0,"from_ts_ns":0,"to_ts_ns":9,"state":"QUEUED","seq":0})" << '\n'
            << R"({"query_id":"a","type":"*","type_id":0,"from_ts_ns":0,"to_ts_ns":9,"state":"RUNNING","seq":0})" << '\n'
            << R"({"query_id":"b","type":"*","type_id":0,"from_ts_ns":0,"to_ts_ns":9,"state":"QUEUED","seq":1})" << '\n'
            << R"({"query_id":"c","type":"*","type_id":0,"from_ts_ns":0,"to_ts_ns":9,"state":"DONE","seq":2})" << '\n'
            << "garbage\n";
    }
    auto cfg = config_for({node.endpoint()});
    cfg.journal_path = journal.string();
    {
        Controller c(cfg);
        EXPECT_EQ(c.get("a").state, QueryState::Failed);
        EXPECT_EQ(c.get("b").state, QueryState::Queued);
        EXPECT_EQ(c.get("c").state, QueryState::Done);
        c.start(false);
        EXPECT_EQ(c.wait("b", std::chrono::seconds(5))->state, QueryState::Done);
        c.submit("*", {1, 2});
        c.stop();
    }
    Controller again(cfg);
    EXPECT_EQ(again.list().size(), 4u);
    EXPECT_EQ(again.get("b").state, QueryState::Done);
    fs::remove(journal);
}

TEST(Controller, HttpApi) {
    FakeNode node;
    node.gated = false;
    Controller c(config_for({node.endpoint()}));
    c.start(true);
    httplib::Client cli("127.0.0.1", c.http_port());
    auto res = cli.Post("/queries", R"({"type":"apache_access","from_ts_ns":1,"to_ts_ns":50})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 202);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    const auto body = nlohmann::json::parse(res->body);
    EXPECT_EQ(body.at("state"), "QUEUED");
    const std::string id = body.at("query_id");

    res = cli.Post("/queries", R"({"type":"*","from_ts_ns":9,"to_ts_ns":1})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(nlohmann::json::parse(res->body).at("error"), "InvalidInterval");
    res = cli.Post("/queries", R"({"type":"zzz","from_ts_ns":1,"to_ts_ns":2})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(nlohmann::json::parse(res->body).at("error"), "UnknownType");

    ASSERT_TRUE(c.wait(id, std::chrono::seconds(5)));
    res = cli.Get(("/queries/" + id).c_str());
    ASSERT_TRUE(res);
    auto j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j.at("state"), "DONE");
    EXPECT_EQ(j.at("nodes")[0].at("progress"), 1.0);

    res = cli.Delete(("/queries/" + id).c_str());
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j.at("result"), "AlreadyTerminal");
    EXPECT_EQ(j.at("state"), "DONE");

    res = cli.Get("/queries/nope");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    res = cli.Get("/queries");
    ASSERT_TRUE(res);
    EXPECT_EQ(nlohmann::json::parse(res->body).at("queries").size(), 1u);

    ASSERT_TRUE(eventually([&] { return c.nodes().at(0).connected; }));
    res = cli.Get("/nodes");
    ASSERT_TRUE(res);
    j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j.at("nodes")[0].at("connected"), true);
    EXPECT_TRUE(j.at("nodes")[0].at("last_seen").is_number());
    c.stop();
}
