#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace avsf {

// Length-prefixed archive of named byte payloads:
//   "AVSA" version, then per entry u32 name length, name, u64 payload
//   length, payload. Clip files and checkpoints share this container.

inline uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string encode_archive(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  out.append("AVSA");
  out.push_back(1);
  for (const auto& [name, payload] : entries) {
    const uint32_t nl = static_cast<uint32_t>(name.size());
    const uint64_t pl = payload.size();
    out.append(reinterpret_cast<const char*>(&nl), 4);
    out.append(name);
    out.append(reinterpret_cast<const char*>(&pl), 8);
    out.append(payload);
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> decode_archive(const std::string& bytes) {
  if (bytes.size() < 5 || bytes.compare(0, 4, "AVSA") != 0 || bytes[4] != 1)
    throw std::runtime_error("archive: bad magic or version");
  std::vector<std::pair<std::string, std::string>> entries;
  size_t pos = 5;
  while (pos < bytes.size()) {
    if (pos + 4 > bytes.size()) throw std::runtime_error("archive: truncated entry header");
    uint32_t nl;
    std::memcpy(&nl, bytes.data() + pos, 4);
    pos += 4;
    if (pos + nl + 8 > bytes.size()) throw std::runtime_error("archive: truncated entry name");
    std::string name = bytes.substr(pos, nl);
    pos += nl;
    uint64_t pl;
    std::memcpy(&pl, bytes.data() + pos, 8);
    pos += 8;
    if (pos + pl > bytes.size()) throw std::runtime_error("archive: truncated payload of '" + name + "'");
    entries.emplace_back(std::move(name), bytes.substr(pos, pl));
    pos += pl;
  }
  return entries;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace avsf
