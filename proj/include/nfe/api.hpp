#pragma once

#include "nfe/engine.hpp"

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace nfe {

/// JSON-over-HTTP front of an engine. Every JSON response carries
/// `store_version` and `elapsed_us`.
class ApiServer {
public:
    explicit ApiServer(Engine& engine, std::filesystem::path ui_dir = {});
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    /// Binds `host:port` (port 0 picks a free one) and returns the port.
    /// Throws BindFailure.
    int bind(const std::string& host, int port);
    /// Serves on a background thread.
    void start();
    /// Serves on the calling thread until stop().
    void run();
    void stop();
    int port() const noexcept { return port_; }

private:
    void routes();

    Engine& engine_;
    std::filesystem::path ui_dir_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
    int port_ = 0;
};

/// Splits `host:port`. Throws ConfigInvalid.
std::pair<std::string, int> parse_bind(const std::string& bind);

}  // namespace nfe
