#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "pinalite/ui_model.hpp"

namespace pinalite {

/// 128 lowercase hex characters of a SHA-512 digest.
class Digest {
 public:
  static bool is_valid_hex(std::string_view hex);

  const std::string& hex() const { return hex_; }
  auto operator<=>(const Digest&) const = default;

 protected:
  Digest() = default;
  explicit Digest(std::string hex);

 private:
  std::string hex_;
};

/// hash(app_context, content) as computed on the user's device.
class ClientHash : public Digest {
 public:
  /// Throws ValidationError on anything but 128 lowercase hex characters.
  static ClientHash from_hex(std::string hex) { return ClientHash(std::move(hex)); }

 private:
  using Digest::Digest;
};

/// Server-side hash of a ClientHash keyed by the secret salt.
class SaltedHash : public Digest {
 public:
  static SaltedHash from_hex(std::string hex) { return SaltedHash(std::move(hex)); }

 private:
  using Digest::Digest;
};

/// 64 secret bytes held by the server only.
class Salt {
 public:
  static constexpr std::size_t kSize = 64;

  static Salt generate();
  static Salt from_bytes(std::span<const unsigned char> bytes);
  /// Reads the key file, or creates it (mode 0600) with fresh random bytes.
  static Salt load_or_create(const std::filesystem::path& path);

  std::span<const unsigned char, kSize> bytes() const { return bytes_; }

 private:
  Salt() = default;
  std::array<unsigned char, kSize> bytes_{};
};

/// Anonymous resettable user id in canonical UUID form.
class UserId {
 public:
  static UserId generate();
  /// Throws ValidationError unless `uuid` is 8-4-4-4-12 hex.
  static UserId parse(std::string_view uuid);

  const std::string& str() const { return uuid_; }
  auto operator<=>(const UserId&) const = default;

 private:
  explicit UserId(std::string uuid) : uuid_(std::move(uuid)) {}
  std::string uuid_;
};

std::string sha512_hex(std::span<const unsigned char> data);
inline std::string sha512_hex(std::string_view data) {
  return sha512_hex(std::span(reinterpret_cast<const unsigned char*>(data.data()), data.size()));
}

/// package 0x1F activity 0x1F content
std::string canonical_pair_bytes(const AppContext& ctx, std::string_view content);
/// package 0x1F activity
std::string canonical_context_bytes(const AppContext& ctx);

ClientHash client_hash_pair(const AppContext& ctx, std::string_view content);
ClientHash client_hash_context(const AppContext& ctx);

/// SHA-512 over (hex of h) 0x1F (salt bytes).
SaltedHash salted_hash(const ClientHash& h, const Salt& salt);

}  // namespace pinalite
