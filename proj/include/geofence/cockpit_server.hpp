#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace geofence::cockpit {

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 8080;  // 0 picks a free port
  std::filesystem::path assets;  // static files; empty serves nothing
  std::vector<std::filesystem::path> scenario_dirs;
  double telemetry_hz = 60.0;
  /// Artificial delay applied to outgoing telemetry, ms. 0 disables it.
  double display_latency_ms = 0.0;
  /// Stop cleanly on SIGINT / SIGTERM.
  bool handle_signals = false;
};

/// Websocket endpoint (any path upgraded) plus static GET/HEAD for the UI
/// bundle. Every connection gets its own flight session.
class CockpitServer {
 public:
  /// Binds immediately; throws std::runtime_error when the port is taken.
  explicit CockpitServer(ServerOptions options);
  ~CockpitServer();
  CockpitServer(const CockpitServer&) = delete;
  CockpitServer& operator=(const CockpitServer&) = delete;

  std::uint16_t port() const;
  /// Serves until stop() (or a signal, when enabled). Blocks.
  void run();
  /// Thread-safe.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Content type for a file name, by extension.
std::string mime_type(const std::filesystem::path& path);

/// Maps a request target onto a file under `root`. Empty when the target
/// escapes the root or is malformed. "/" maps to index.html.
std::filesystem::path resolve_asset(const std::filesystem::path& root, const std::string& target);

}  // namespace geofence::cockpit
