#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "json.hpp"
#include "litevla/data_pipeline.hpp"
#include "litevla/runtime.hpp"

namespace litevla {

// Newline-delimited JSON over TCP.
//   server -> client: state, frame, inference, status, error
//   client -> server: teleop, record, mode
// Field kinds per message type; every listed field is required and no other
// field is allowed.
const nlohmann::json& protocol_schema();

// nullopt when `msg` conforms, otherwise a description of the first problem.
std::optional<std::string> validate_client_message(const nlohmann::json& msg);
std::optional<std::string> validate_server_message(const nlohmann::json& msg);

nlohmann::json state_message(std::uint64_t seq, const RuntimeSnapshot& s);
nlohmann::json frame_message(std::uint64_t seq, const SceneImage& img);
nlohmann::json inference_message(const InferenceEvent& e);
nlohmann::json status_message(RuntimeMode mode, bool recording);
nlohmann::json error_message(const std::string& what);

struct WireServerConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;  // 0 picks a free port
    double state_hz = 20.0;
    double frame_hz = 5.0;
    std::optional<std::filesystem::path> capture_dir;
};

// Third activity next to the runtime's control and reasoning threads. Reads
// runtime snapshots, forwards teleop commands, and records capture logs.
class WireServer {
public:
    WireServer(LiveRuntime& runtime, WireServerConfig cfg);
    ~WireServer();
    WireServer(const WireServer&) = delete;
    WireServer& operator=(const WireServer&) = delete;

    void start();
    void stop();
    std::uint16_t port() const { return port_; }
    bool recording() const { return recording_.load(); }
    std::size_t clients() const { return clients_.load(); }
    std::size_t frames_recorded() const { return frames_recorded_.load(); }

private:
    struct Impl;
    void loop();

    LiveRuntime& runtime_;
    WireServerConfig cfg_;
    std::unique_ptr<Impl> impl_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::atomic<bool> recording_{false};
    std::atomic<std::size_t> clients_{0};
    std::atomic<std::size_t> frames_recorded_{0};
    std::thread thread_;
};

// Minimal blocking client used by tests and scripted sessions.
class WireClient {
public:
    WireClient(const std::string& host, std::uint16_t port);
    ~WireClient();
    WireClient(const WireClient&) = delete;
    WireClient& operator=(const WireClient&) = delete;

    void send(const nlohmann::json& msg);
    std::optional<nlohmann::json> receive(std::chrono::milliseconds timeout);
    // Waits for the next message of `type`, discarding others.
    std::optional<nlohmann::json> receive_type(const std::string& type, std::chrono::milliseconds timeout);
    void close();

private:
    int fd_ = -1;
    std::string buffer_;
};

}  // namespace litevla
