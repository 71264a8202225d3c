#include "fetch.hpp"

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "gmpvi/dataset.hpp"
#include "gmpvi/error.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <map>

namespace gmpvi::tools {

namespace {

struct Source {
  std::string host;
  std::string path;
  std::string file;
};

const std::map<std::string, Source>& sources() {
  static const std::map<std::string, Source> s{
      {"telescope", {"https://archive.ics.uci.edu", "/ml/machine-learning-databases/magic/magic04.data", "magic04.data"}},
      {"lidar", {"https://www.stat.cmu.edu", "/~larry/all-of-nonpar/=data/lidar.dat", "lidar.dat"}},
  };
  return s;
}

std::string to_hex(const unsigned char* d, unsigned len) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(digits[d[i] >> 4]);
    out.push_back(digits[d[i] & 15]);
  }
  return out;
}

std::string sha256_string(const std::string& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw data_error("sha256 failed");
  return to_hex(md.data(), len);
}

nlohmann::json read_checksums(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    throw data_error(p.string() + " is not valid JSON");
  }
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_string(data);
}

FetchResult fetch_dataset(const std::string& name, const std::filesystem::path& dir, const std::string& expected) {
  const auto it = sources().find(name);
  if (it == sources().end()) throw config_error("unknown data set '" + name + "' (telescope, lidar)");
  const Source& src = it->second;
  std::filesystem::create_directories(dir);
  const std::filesystem::path target = dir / src.file;
  const std::filesystem::path sums_path = dir / "checksums.json";
  nlohmann::json sums = read_checksums(sums_path);
  std::string pinned = expected;
  if (pinned.empty() && sums.contains(src.file)) pinned = sums[src.file].get<std::string>();

  FetchResult r;
  r.path = target;
  if (std::filesystem::exists(target)) {
    r.sha256 = sha256_file(target);
  } else {
    httplib::Client cli(src.host);
    cli.set_follow_location(true);
    cli.set_connection_timeout(30);
    cli.set_read_timeout(300);
    auto res = cli.Get(src.path);
    if (!res) throw data_error("download of " + name + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw data_error("download of " + name + " failed: HTTP " + std::to_string(res->status));
    r.sha256 = sha256_string(res->body);
    if (!pinned.empty() && r.sha256 != pinned)
      throw data_error("checksum mismatch for " + name + ": got " + r.sha256 + ", expected " + pinned);
    write_text_atomic(target, res->body);
    r.downloaded = true;
  }
  if (!pinned.empty() && r.sha256 != pinned)
    throw data_error("checksum mismatch for cached " + target.string() + ": got " + r.sha256 + ", expected " + pinned);
  if (!sums.contains(src.file)) {
    sums[src.file] = r.sha256;
    write_text_atomic(sums_path, sums.dump(2) + "\n");
  }
  return r;
}

}  // namespace gmpvi::tools
