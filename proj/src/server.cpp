#include "cybexp/api.hpp"

#include <httplib.h>

#include <atomic>
#include <condition_variable>
#include <iostream>
#include <thread>

namespace cybexp::api {

namespace {

std::mutex g_server_mutex;
httplib::Server* g_server = nullptr;

std::string bearer(const httplib::Request& req)
{
    const auto h = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (h.size() > prefix.size() && std::string_view(h).substr(0, prefix.size()) == prefix) return h.substr(prefix.size());
    return {};
}

} // namespace

void serve(Service& service, const std::string& host, int port, std::function<void(int)> ready, int tick_ms)
{
    httplib::Server server;
    auto route = [&service](const httplib::Request& req, httplib::Response& res) {
        ApiRequest r;
        r.method = req.method;
        r.path = req.path;
        for (const auto& [k, v] : req.params) r.query[k] = v;
        r.token = bearer(req);
        r.body = req.body;
        const auto out = service.handle(r);
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    };
    server.Get(R"(/.*)", route);
    server.Post(R"(/.*)", route);
    server.Put(R"(/.*)", route);
    server.Delete(R"(/.*)", route);

    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    {
        std::lock_guard lock(g_server_mutex);
        g_server = &server;
    }

    std::atomic<bool> stopping{false};
    std::mutex m;
    std::condition_variable cv;
    std::thread worker([&] {
        std::unique_lock lock(m);
        while (!stopping) {
            cv.wait_for(lock, std::chrono::milliseconds(tick_ms), [&] { return stopping.load(); });
            if (stopping) break;
            try {
                service.tick();
            } catch (const std::exception& e) {
                std::cerr << "tick failed: " << e.what() << '\n';
            }
        }
    });

    if (ready) ready(bound);
    server.listen_after_bind();

    {
        std::lock_guard lock(m);
        stopping = true;
    }
    cv.notify_all();
    worker.join();
    std::lock_guard lock(g_server_mutex);
    g_server = nullptr;
}

void stop_server()
{
    std::lock_guard lock(g_server_mutex);
    if (g_server) g_server->stop();
}

} // namespace cybexp::api
