#include "litevla/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <map>
#include <vector>

namespace litevla {

using nlohmann::json;

const json& protocol_schema() {
    static const json schema = json::parse(R"({
  "client": {
    "teleop": {"linear": "number", "angular": "number"},
    "record": {"on": "boolean"},
    "mode": {"value": ["teleop", "policy", "idle"]}
  },
  "server": {
    "state": {"seq": "integer", "t": "number", "x": "number", "y": "number", "theta": "number", "v": "number", "omega": "number"},
    "frame": {"seq": "integer", "png_base64": "string"},
    "inference": {"seq": "integer", "action_string": "string", "latency_s": "number", "queue_depth": "integer"},
    "status": {"mode": ["teleop", "policy", "idle"], "recording": "boolean"},
    "error": {"message": "string"}
  }
})");
    return schema;
}

namespace {

std::optional<std::string> validate_against(const json& msg, const json& types, const char* side) {
    if (!msg.is_object()) return "message is not a JSON object";
    if (!msg.contains("type") || !msg["type"].is_string()) return "message lacks a string 'type'";
    const std::string type = msg["type"].get<std::string>();
    if (!types.contains(type)) return std::string("unknown ") + side + " message type '" + type + "'";
    const json& fields = types[type];
    for (const auto& [key, value] : msg.items()) {
        if (key != "type" && !fields.contains(key)) return "unexpected field '" + key + "' in " + type;
    }
    for (const auto& [key, kind] : fields.items()) {
        if (!msg.contains(key)) return "missing field '" + key + "' in " + type;
        const json& v = msg[key];
        bool ok = false;
        if (kind.is_array()) {
            ok = v.is_string() && std::find(kind.begin(), kind.end(), v) != kind.end();
        } else if (kind == "number") {
            ok = v.is_number() && std::isfinite(v.get<double>());
        } else if (kind == "integer") {
            ok = v.is_number_integer() && v.get<std::int64_t>() >= 0;
        } else if (kind == "string") {
            ok = v.is_string();
        } else if (kind == "boolean") {
            ok = v.is_boolean();
        }
        if (!ok) return "field '" + key + "' in " + type + " has the wrong type or value";
    }
    return std::nullopt;
}

void set_nonblocking(int fd) {
    const int flags = fcntl(fd, F_GETFL, 0);
    fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

std::int64_t wall_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

std::optional<std::string> validate_client_message(const json& msg) {
    return validate_against(msg, protocol_schema()["client"], "client");
}

std::optional<std::string> validate_server_message(const json& msg) {
    return validate_against(msg, protocol_schema()["server"], "server");
}

json state_message(std::uint64_t seq, const RuntimeSnapshot& s) {
    return {{"type", "state"}, {"seq", seq},         {"t", s.t},          {"x", s.state.x},
            {"y", s.state.y},  {"theta", s.state.theta}, {"v", s.state.v}, {"omega", s.state.omega}};
}

json frame_message(std::uint64_t seq, const SceneImage& img) {
    return {{"type", "frame"}, {"seq", seq}, {"png_base64", base64_encode(encode_png(img))}};
}

json inference_message(const InferenceEvent& e) {
    return {{"type", "inference"},
            {"seq", e.seq},
            {"action_string", e.action},
            {"latency_s", e.latency},
            {"queue_depth", e.queue_depth}};
}

json status_message(RuntimeMode mode, bool recording) {
    return {{"type", "status"}, {"mode", mode_name(mode)}, {"recording", recording}};
}

json error_message(const std::string& what) { return {{"type", "error"}, {"message", what}}; }

struct WireServer::Impl {
    struct Client {
        int fd;
        std::string in;
        std::string out;
    };
    std::map<int, Client> clients;
    std::unique_ptr<CaptureLogWriter> capture;
    std::uint64_t state_seq = 0;
    std::uint64_t frame_seq = 0;
};

WireServer::WireServer(LiveRuntime& runtime, WireServerConfig cfg)
    : runtime_(runtime), cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {}

WireServer::~WireServer() { stop(); }

void WireServer::start() {
    if (running_) return;
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    const int one = 1;
    setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(cfg_.port);
    if (inet_pton(AF_INET, cfg_.host.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw std::invalid_argument("invalid listen address '" + cfg_.host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 8) < 0) {
        const std::string err = std::strerror(errno);
        ::close(listen_fd_);
        throw std::runtime_error("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port) + ": " + err);
    }
    socklen_t len = sizeof addr;
    getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    set_nonblocking(listen_fd_);
    running_ = true;
    thread_ = std::thread([this] { loop(); });
}

void WireServer::stop() {
    if (!running_.exchange(false)) return;
    if (thread_.joinable()) thread_.join();
    for (auto& [fd, c] : impl_->clients) ::close(fd);
    impl_->clients.clear();
    clients_ = 0;
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    impl_->capture.reset();
}

void WireServer::loop() {
    using clock = std::chrono::steady_clock;
    auto next_state = clock::now();
    auto next_frame = clock::now();
    const auto state_period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / cfg_.state_hz));
    const auto frame_period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / cfg_.frame_hz));
    auto& clients = impl_->clients;

    auto broadcast = [&](const json& msg) {
        const std::string line = msg.dump() + "\n";
        for (auto& [fd, c] : clients) c.out += line;
    };
    auto reply = [&](Impl::Client& c, const json& msg) { c.out += msg.dump() + "\n"; };
    auto log_command = [&](double linear, double angular) {
        if (impl_->capture) impl_->capture->write({wall_ns(), std::nullopt, linear, angular});
    };

    auto handle = [&](Impl::Client& c, const std::string& line) {
        json msg;
        try {
            msg = json::parse(line);
        } catch (const json::parse_error&) {
            reply(c, error_message("message is not valid JSON"));
            return;
        }
        if (auto err = validate_client_message(msg)) {
            reply(c, error_message(*err));
            return;
        }
        const std::string type = msg["type"];
        if (type == "teleop") {
            if (runtime_.mode() != RuntimeMode::Teleop) {
                reply(c, error_message(std::string("teleop ignored in mode ") + mode_name(runtime_.mode())));
                return;
            }
            const double lin = msg["linear"], ang = msg["angular"];
            try {
                runtime_.teleop(lin, ang);
                log_command(lin, ang);
            } catch (const std::exception& e) {
                reply(c, error_message(e.what()));
            }
        } else if (type == "record") {
            const bool on = msg["on"];
            if (on && !impl_->capture) {
                if (!cfg_.capture_dir) {
                    reply(c, error_message("recording unavailable: server has no capture directory"));
                    return;
                }
                std::filesystem::create_directories(*cfg_.capture_dir / "frames");
                impl_->capture = std::make_unique<CaptureLogWriter>(*cfg_.capture_dir / "capture.ndjson", true);
            } else if (!on) {
                impl_->capture.reset();
            }
            recording_ = on;
            broadcast(status_message(runtime_.mode(), recording_));
        } else if (type == "mode") {
            runtime_.set_mode(*mode_from_name(msg["value"]));
            broadcast(status_message(runtime_.mode(), recording_));
        }
    };

    auto drop = [&](int fd) {
        ::close(fd);
        clients.erase(fd);
        clients_ = clients.size();
        // Losing the operator must never leave the robot moving.
        if (runtime_.mode() == RuntimeMode::Teleop) {
            runtime_.teleop(0.0, 0.0);
            log_command(0.0, 0.0);
        }
    };

    while (running_) {
        std::vector<pollfd> fds;
        fds.push_back({listen_fd_, POLLIN, 0});
        for (auto& [fd, c] : clients) {
            fds.push_back({fd, static_cast<short>(POLLIN | (c.out.empty() ? 0 : POLLOUT)), 0});
        }
        ::poll(fds.data(), fds.size(), 10);

        if (fds[0].revents & POLLIN) {
            while (true) {
                const int fd = ::accept(listen_fd_, nullptr, nullptr);
                if (fd < 0) break;
                set_nonblocking(fd);
                const int one = 1;
                setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
                auto& c = clients[fd] = Impl::Client{fd, {}, {}};
                clients_ = clients.size();
                reply(c, status_message(runtime_.mode(), recording_));
            }
        }
        std::vector<int> dead;
        for (std::size_t i = 1; i < fds.size(); ++i) {
            auto it = clients.find(fds[i].fd);
            if (it == clients.end()) continue;
            auto& c = it->second;
            if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) {
                char buf[4096];
                const ssize_t n = ::recv(c.fd, buf, sizeof buf, 0);
                if (n == 0 || (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK)) {
                    dead.push_back(c.fd);
                    continue;
                }
                if (n > 0) c.in.append(buf, static_cast<std::size_t>(n));
                std::size_t pos;
                while ((pos = c.in.find('\n')) != std::string::npos) {
                    const std::string line = c.in.substr(0, pos);
                    c.in.erase(0, pos + 1);
                    if (!line.empty()) handle(c, line);
                }
                if (c.in.size() > (1u << 20)) dead.push_back(c.fd);
            }
            if ((fds[i].revents & POLLOUT) && !c.out.empty()) {
                const ssize_t n = ::send(c.fd, c.out.data(), c.out.size(), MSG_NOSIGNAL);
                if (n > 0) c.out.erase(0, static_cast<std::size_t>(n));
                else if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK) dead.push_back(c.fd);
            }
            if (c.out.size() > (8u << 20)) dead.push_back(c.fd);
        }
        std::sort(dead.begin(), dead.end());
        dead.erase(std::unique(dead.begin(), dead.end()), dead.end());
        for (int fd : dead) drop(fd);

        const auto now = clock::now();
        if (now >= next_state) {
            broadcast(state_message(++impl_->state_seq, runtime_.snapshot()));
            next_state += state_period;
            if (next_state < now) next_state = now + state_period;
        }
        if (now >= next_frame) {
            const RuntimeSnapshot snap = runtime_.snapshot();
            const SceneImage img = render_scene(snap.state, runtime_.world(), CameraConfig{64, 64});
            const std::uint64_t seq = ++impl_->frame_seq;
            if (!clients.empty()) broadcast(frame_message(seq, img));
            if (impl_->capture) {
                char name[40];
                std::snprintf(name, sizeof name, "frames/%08llu.png", static_cast<unsigned long long>(seq));
                write_png(*cfg_.capture_dir / name, img);
                impl_->capture->write({wall_ns(), std::string(name), std::nullopt, std::nullopt});
                ++frames_recorded_;
            }
            next_frame += frame_period;
            if (next_frame < now) next_frame = now + frame_period;
        }
        while (auto ev = runtime_.take_inference()) broadcast(inference_message(*ev));
    }
}

WireClient::WireClient(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw std::invalid_argument("invalid address '" + host + "'");
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
        const std::string err = std::strerror(errno);
        ::close(fd_);
        fd_ = -1;
        throw std::runtime_error("cannot connect to " + host + ":" + std::to_string(port) + ": " + err);
    }
    const int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

WireClient::~WireClient() { close(); }

void WireClient::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

void WireClient::send(const json& msg) {
    if (fd_ < 0) throw std::runtime_error("client is closed");
    const std::string line = msg.dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
        const ssize_t n = ::send(fd_, line.data() + off, line.size() - off, MSG_NOSIGNAL);
        if (n <= 0) throw std::runtime_error(std::string("send failed: ") + std::strerror(errno));
        off += static_cast<std::size_t>(n);
    }
}

std::optional<json> WireClient::receive(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        const auto pos = buffer_.find('\n');
        if (pos != std::string::npos) {
            const std::string line = buffer_.substr(0, pos);
            buffer_.erase(0, pos + 1);
            return json::parse(line);
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0 || fd_ < 0) return std::nullopt;
        pollfd p{fd_, POLLIN, 0};
        if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) return std::nullopt;
        char buf[65536];
        const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
        if (n <= 0) return std::nullopt;
        buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

std::optional<json> WireClient::receive_type(const std::string& type, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        auto msg = receive(left);
        if (!msg) return std::nullopt;
        if (msg->value("type", "") == type) return msg;
    }
}

}  // namespace litevla
