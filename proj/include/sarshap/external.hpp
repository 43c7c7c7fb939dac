#pragma once

// Client side of the NDJSON evaluator protocol, spoken over a child process's
// stdin/stdout or a TCP socket. One JSON object per LF-terminated line.
//
//   -> {"id":0,"op":"handshake","version":1}
//   <- {"id":0,"version":1,"classes":K[,"capabilities":["score_batch"]]}
//   -> {"id":n,"op":"score","h":H,"w":W,"data":[...],"class":c}
//   <- {"id":n,"scores":[K floats]}
//   -> {"id":n,"op":"score_batch","h":H,"w":W,"batch":[[...],...],"class":c}
//   <- {"id":n,"scores":[[K floats],...]}
//   <- {"id":n,"error":"message"}
//
// Unknown reply fields are ignored. Replies may arrive in any order and are
// matched to requests by id.
//
// POSIX only.

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "sarshap/error.hpp"
#include "sarshap/evaluators.hpp"
#include "sarshap/imaging.hpp"

namespace sarshap {

inline constexpr int kProtocolVersion = 1;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void write_line(const std::string& line) = 0;
  // Next line without its terminator; nullopt once the peer has closed.
  // Throws TimeoutError when nothing complete arrives within the timeout.
  virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
};

class FdTransport : public Transport {
 public:
  FdTransport(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  ~FdTransport() override { close_fds(); }

  void write_line(const std::string& line) override {
    std::string framed = line;
    framed.push_back('\n');
    std::size_t done = 0;
    while (done < framed.size()) {
      const ssize_t n = send_bytes(framed.data() + done, framed.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("transport write failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (eof_) return std::nullopt;

      const auto remaining =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (remaining.count() <= 0) throw TimeoutError("no reply from evaluator within timeout");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;

      char chunk[65536];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw ProtocolError(std::string("transport read failed: ") + std::strerror(errno));
      }
      if (n == 0) {
        eof_ = true;
        if (!buffer_.empty()) {
          std::string line;
          line.swap(buffer_);
          return line;
        }
        return std::nullopt;
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  virtual ssize_t send_bytes(const char* data, std::size_t size) { return ::write(write_fd_, data, size); }

  void close_write() {
    if (write_fd_ < 0) return;
    if (write_fd_ == read_fd_) {
      ::shutdown(write_fd_, SHUT_WR);
    } else {
      ::close(write_fd_);
      write_fd_ = -1;
    }
  }

  void close_fds() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = write_fd_ = -1;
  }

  int read_fd_;
  int write_fd_;

 private:
  std::string buffer_;
  bool eof_ = false;
};

// Runs `/bin/sh -c command` with its stdin and stdout connected to us.
class ChildProcessTransport final : public FdTransport {
 public:
  explicit ChildProcessTransport(const std::string& command) : FdTransport(-1, -1) {
    // A child that dies mid-write must surface as EPIPE, not kill us.
    struct sigaction current {};
    if (::sigaction(SIGPIPE, nullptr, &current) == 0 && current.sa_handler == SIG_DFL) ::signal(SIGPIPE, SIG_IGN);

    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw ProtocolError("pipe failed");
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw ProtocolError("pipe failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw ProtocolError("fork failed");
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    read_fd_ = from_child[0];
    write_fd_ = to_child[1];
  }

  ~ChildProcessTransport() override {
    close_write();
    if (pid_ > 0) {
      int status = 0;
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
      while (::waitpid(pid_, &status, WNOHANG) == 0) {
        if (std::chrono::steady_clock::now() > deadline) {
          ::kill(pid_, SIGKILL);
          ::waitpid(pid_, &status, 0);
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
    }
  }

 private:
  pid_t pid_ = -1;
};

class TcpTransport final : public FdTransport {
 public:
  // "host:port"
  explicit TcpTransport(const std::string& endpoint) : FdTransport(-1, -1) {
    const auto colon = endpoint.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("TCP endpoint must be host:port");
    const std::string host = endpoint.substr(0, colon);
    const std::string port = endpoint.substr(colon + 1);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
      throw ProtocolError("cannot resolve " + endpoint + ": " + ::gai_strerror(rc));
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw ProtocolError("cannot connect to " + endpoint);
    read_fd_ = write_fd_ = fd;
  }

 protected:
  ssize_t send_bytes(const char* data, std::size_t size) override { return ::send(write_fd_, data, size, MSG_NOSIGNAL); }
};

struct HandshakeInfo {
  int version = 0;
  int classes = 0;
  bool batch = false;
};

namespace detail {

inline nlohmann::json parse_reply(const std::string& line) {
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed reply: ") + e.what());
  }
  if (!reply.is_object() || !reply.contains("id") || !reply["id"].is_number_integer())
    throw ProtocolError("malformed reply: missing integer id");
  return reply;
}

inline nlohmann::json image_payload(const AmplitudeImage& image) {
  return nlohmann::json(std::vector<double>(image.data().begin(), image.data().end()));
}

}  // namespace detail

inline HandshakeInfo external_handshake(Transport& transport,
                                        std::chrono::milliseconds timeout = std::chrono::seconds(30)) {
  transport.write_line(nlohmann::json{{"id", 0}, {"op", "handshake"}, {"version", kProtocolVersion}}.dump());
  const auto line = transport.read_line(timeout);
  if (!line) throw ProtocolError("evaluator closed the connection during handshake");
  const auto reply = detail::parse_reply(*line);
  if (reply["id"].get<long long>() != 0) throw ProtocolError("handshake reply carries the wrong id");
  if (reply.contains("error")) throw ProtocolError("handshake rejected: " + reply["error"].dump());
  HandshakeInfo info;
  try {
    info.version = reply.at("version").get<int>();
    info.classes = reply.at("classes").get<int>();
    if (reply.contains("capabilities"))
      for (const auto& cap : reply["capabilities"])
        if (cap.is_string() && cap.get<std::string>() == "score_batch") info.batch = true;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed handshake reply: ") + e.what());
  }
  if (info.version != kProtocolVersion)
    throw ProtocolError("protocol version mismatch: evaluator speaks " + std::to_string(info.version) +
                        ", expected " + std::to_string(kProtocolVersion));
  if (info.classes < 2) throw ProtocolError("evaluator must report at least two classes");
  return info;
}

struct ExternalOptions {
  std::chrono::milliseconds timeout{std::chrono::seconds(30)};
  // Use score_batch when the evaluator advertises it.
  bool allow_batch = true;
};

// Not thread-safe: one instance per worker.
class ExternalEvaluator final : public GameEvaluator {
 public:
  explicit ExternalEvaluator(std::unique_ptr<Transport> transport, ExternalOptions options = {})
      : transport_(std::move(transport)), options_(options) {
    info_ = external_handshake(*transport_, options_.timeout);
  }

  static std::unique_ptr<ExternalEvaluator> spawn(const std::string& command, ExternalOptions options = {}) {
    return std::make_unique<ExternalEvaluator>(std::make_unique<ChildProcessTransport>(command), options);
  }
  static std::unique_ptr<ExternalEvaluator> connect(const std::string& endpoint, ExternalOptions options = {}) {
    return std::make_unique<ExternalEvaluator>(std::make_unique<TcpTransport>(endpoint), options);
  }

  std::string name() const override { return "external"; }
  int class_count() const override { return info_.classes; }
  bool thread_safe() const override { return false; }
  const HandshakeInfo& handshake() const noexcept { return info_; }

  std::vector<double> scores(const AmplitudeImage& image, const RegionLabelMap&) override {
    const long long id = send_score(image, 0);
    return check_scores(await(id).at("scores"));
  }

  double score(const AmplitudeImage& image, const RegionLabelMap&, int class_index) override {
    check_class(class_index);
    const long long id = send_score(image, class_index);
    return check_scores(await(id).at("scores"))[class_index];
  }

  std::vector<double> score_many(std::span<const AmplitudeImage> images, const RegionLabelMap&,
                                 int class_index) override {
    check_class(class_index);
    std::vector<double> out;
    out.reserve(images.size());
    if (images.empty()) return out;
    if (info_.batch && options_.allow_batch) {
      const long long id = next_id_++;
      nlohmann::json batch = nlohmann::json::array();
      for (const auto& img : images) {
        if (!img.same_shape(images[0].height(), images[0].width()))
          throw InvalidArgument("score_batch requires images of one shape");
        batch.push_back(detail::image_payload(img));
      }
      transport_->write_line(nlohmann::json{{"id", id},
                                            {"op", "score_batch"},
                                            {"h", images[0].height()},
                                            {"w", images[0].width()},
                                            {"batch", std::move(batch)},
                                            {"class", class_index}}
                                 .dump());
      outstanding_.emplace(id, std::nullopt);
      const auto reply = await(id);
      const auto& rows = reply.at("scores");
      if (!rows.is_array() || rows.size() != images.size())
        throw ProtocolError("score_batch reply has the wrong number of rows");
      for (const auto& row : rows) out.push_back(check_scores(row)[class_index]);
      return out;
    }

    std::vector<long long> ids;
    ids.reserve(images.size());
    for (const auto& img : images) ids.push_back(send_score(img, class_index));
    for (long long id : ids) out.push_back(check_scores(await(id).at("scores"))[class_index]);
    return out;
  }

 private:
  long long send_score(const AmplitudeImage& image, int class_index) {
    const long long id = next_id_++;
    transport_->write_line(nlohmann::json{{"id", id},
                                          {"op", "score"},
                                          {"h", image.height()},
                                          {"w", image.width()},
                                          {"data", detail::image_payload(image)},
                                          {"class", class_index}}
                               .dump());
    outstanding_.emplace(id, std::nullopt);
    return id;
  }

  // Reads replies until the one for `id` is available; others are parked.
  nlohmann::json await(long long id) {
    for (;;) {
      auto it = outstanding_.find(id);
      if (it == outstanding_.end()) throw ProtocolError("no request with id " + std::to_string(id) + " in flight");
      if (it->second) {
        nlohmann::json reply = std::move(*it->second);
        outstanding_.erase(it);
        if (reply.contains("error"))
          throw ProtocolError("evaluator error for request " + std::to_string(id) + ": " +
                              (reply["error"].is_string() ? reply["error"].get<std::string>() : reply["error"].dump()));
        if (!reply.contains("scores")) throw ProtocolError("reply " + std::to_string(id) + " has no scores");
        return reply;
      }
      const auto line = transport_->read_line(options_.timeout);
      if (!line) throw ProtocolError("evaluator closed the connection");
      if (line->empty()) continue;
      auto reply = detail::parse_reply(*line);
      const long long rid = reply["id"].get<long long>();
      auto slot = outstanding_.find(rid);
      if (slot == outstanding_.end() || slot->second)
        throw ProtocolError("reply id " + std::to_string(rid) + " does not match any request in flight");
      slot->second = std::move(reply);
    }
  }

  std::vector<double> check_scores(const nlohmann::json& scores) const {
    if (!scores.is_array()) throw ProtocolError("scores must be an array");
    if (static_cast<int>(scores.size()) != info_.classes)
      throw ProtocolError("expected " + std::to_string(info_.classes) + " scores, got " +
                          std::to_string(scores.size()));
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& s : scores) {
      if (!s.is_number()) throw ProtocolError("score is not a number");
      const double v = s.get<double>();
      if (!std::isfinite(v)) throw ProtocolError("non-finite score");
      out.push_back(v);
    }
    return out;
  }

  std::unique_ptr<Transport> transport_;
  ExternalOptions options_;
  HandshakeInfo info_;
  long long next_id_ = 1;
  std::map<long long, std::optional<nlohmann::json>> outstanding_;
};

}  // namespace sarshap
