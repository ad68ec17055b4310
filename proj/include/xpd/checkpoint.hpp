#pragma once

#include <filesystem>
#include <memory>

#include "json.hpp"
#include "xpd/net.hpp"

// Single-file archive: 8-byte magic, u64 manifest length, JSON manifest, then
// every parameter as raw little-endian float64 in manifest order.
namespace xpd::checkpoint {

inline constexpr int kFormatVersion = 1;

// Raised when a checkpoint does not fit the requested architecture.
struct MismatchError : ConfigError {
  using ConfigError::ConfigError;
};

// `extra` is stored under manifest["extra"] (epoch, config echo, ...).
void save(const std::filesystem::path& file, const net::XpdNet& model,
          const nlohmann::json& extra = nlohmann::json::object());

nlohmann::json read_manifest(const std::filesystem::path& file);

// Copies stored tensors into `model`; refuses on architecture-hash mismatch.
void load_into(const std::filesystem::path& file, net::XpdNet& model);

// Rebuilds the network from the manifest's config and loads it.
std::unique_ptr<net::XpdNet> load(const std::filesystem::path& file);

}  // namespace xpd::checkpoint
