#include "pinalite/privacy_hash.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>
#include <sys/stat.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <memory>
#include <vector>

#include "pinalite/errors.hpp"

namespace pinalite {

namespace {

constexpr char kHex[] = "0123456789abcdef";

std::string to_hex(std::span<const unsigned char> bytes) {
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

void random_bytes(std::span<unsigned char> out) {
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) throw Error("system randomness unavailable");
}

struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

}  // namespace

bool Digest::is_valid_hex(std::string_view hex) {
  return hex.size() == 128 &&
         std::all_of(hex.begin(), hex.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

Digest::Digest(std::string hex) : hex_(std::move(hex)) {
  if (!is_valid_hex(hex_)) throw ValidationError("expected 128 lowercase hex characters");
}

std::string sha512_hex(std::span<const unsigned char> data) {
  std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha512(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) {
    throw Error("SHA-512 failed");
  }
  return to_hex(std::span(md.data(), len));
}

Salt Salt::generate() {
  Salt s;
  random_bytes(s.bytes_);
  return s;
}

Salt Salt::from_bytes(std::span<const unsigned char> bytes) {
  if (bytes.size() != kSize) throw ValidationError("salt must be exactly 64 bytes");
  Salt s;
  std::copy(bytes.begin(), bytes.end(), s.bytes_.begin());
  return s;
}

Salt Salt::load_or_create(const std::filesystem::path& path) {
  if (std::filesystem::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() != kSize) throw ValidationError("salt file " + path.string() + " is not 64 bytes");
    return from_bytes(data);
  }
  Salt s = generate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot create salt file " + path.string());
    out.write(reinterpret_cast<const char*>(s.bytes_.data()), kSize);
  }
  ::chmod(path.c_str(), S_IRUSR | S_IWUSR);
  return s;
}

UserId UserId::generate() {
  std::array<unsigned char, 16> b{};
  random_bytes(b);
  b[6] = static_cast<unsigned char>((b[6] & 0x0F) | 0x40);
  b[8] = static_cast<unsigned char>((b[8] & 0x3F) | 0x80);
  std::string hex = to_hex(b);
  return UserId(hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" + hex.substr(16, 4) + "-" +
                hex.substr(20, 12));
}

UserId UserId::parse(std::string_view uuid) {
  if (uuid.size() != 36) throw ValidationError("user id must be a 36-character UUID");
  for (std::size_t i = 0; i < uuid.size(); ++i) {
    char c = uuid[i];
    bool dash = i == 8 || i == 13 || i == 18 || i == 23;
    if (dash ? c != '-' : !std::isxdigit(static_cast<unsigned char>(c)))
      throw ValidationError("user id must be a canonical UUID");
  }
  std::string lower(uuid);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return UserId(std::move(lower));
}

std::string canonical_context_bytes(const AppContext& ctx) {
  validate_context(ctx);
  std::string out;
  out.reserve(ctx.package_name.size() + ctx.activity_name.size() + 1);
  out += ctx.package_name;
  out += '\x1F';
  out += ctx.activity_name;
  return out;
}

std::string canonical_pair_bytes(const AppContext& ctx, std::string_view content) {
  std::string out = canonical_context_bytes(ctx);
  out += '\x1F';
  out += content;
  return out;
}

ClientHash client_hash_pair(const AppContext& ctx, std::string_view content) {
  return ClientHash::from_hex(sha512_hex(canonical_pair_bytes(ctx, content)));
}

ClientHash client_hash_context(const AppContext& ctx) {
  return ClientHash::from_hex(sha512_hex(canonical_context_bytes(ctx)));
}

SaltedHash salted_hash(const ClientHash& h, const Salt& salt) {
  std::vector<unsigned char> buf(h.hex().begin(), h.hex().end());
  buf.push_back(0x1F);
  buf.insert(buf.end(), salt.bytes().begin(), salt.bytes().end());
  return SaltedHash::from_hex(sha512_hex(buf));
}

}  // namespace pinalite
