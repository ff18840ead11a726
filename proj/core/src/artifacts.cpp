#include "echl/artifacts.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace echl {

namespace {

constexpr char kMagic[4] = {'E', 'C', 'H', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
 public:
  ByteReader(const std::string& buf, const std::string& what) : buf_(buf), what_(what) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::uint8_t u8() {
    need(1);
    return byte();
  }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  std::uint8_t byte() { return static_cast<std::uint8_t>(buf_[pos_++]); }
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw parse_error(what_ + ": truncated table");
  }
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

void LogitsTable::validate() const {
  const std::size_t n = rows();
  if (species_id.size() != n || logits.size() != n * k || labels.size() != n * k) {
    throw validation_error("logits table size mismatch");
  }
  for (std::uint8_t y : labels) {
    if (y > 1) throw validation_error("logits table labels must be 0/1");
  }
}

void write_echl(const std::filesystem::path& path, const LogitsTable& t) {
  t.validate();
  std::string out;
  out.reserve(16 + t.rows() * (16 + t.k * 5));
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rows()));
  put_u32(out, t.k);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    put_u64(out, t.node_id[i]);
    put_u64(out, t.species_id[i]);
    for (std::uint32_t j = 0; j < t.k; ++j) put_f32(out, t.logits[i * t.k + j]);
    for (std::uint32_t j = 0; j < t.k; ++j) {
      out.push_back(static_cast<char>(t.labels[i * t.k + j]));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw engine_error("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw engine_error("write failed: " + path.string());
}

LogitsTable read_echl(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw parse_error("cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r(buf, path.string());
  if (buf.size() < 4 || buf.compare(0, 4, kMagic, 4) != 0) {
    throw parse_error(path.string() + ": not an ECHL table (bad magic)");
  }
  r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw parse_error(path.string() + ": unsupported ECHL version " + std::to_string(version));
  }
  const std::uint32_t n = r.u32();
  const std::uint32_t k = r.u32();
  LogitsTable t;
  t.k = k;
  t.node_id.reserve(n);
  t.species_id.reserve(n);
  t.logits.reserve(static_cast<std::size_t>(n) * k);
  t.labels.reserve(static_cast<std::size_t>(n) * k);
  for (std::uint32_t i = 0; i < n; ++i) {
    t.node_id.push_back(r.u64());
    t.species_id.push_back(r.u64());
    for (std::uint32_t j = 0; j < k; ++j) t.logits.push_back(r.f32());
    for (std::uint32_t j = 0; j < k; ++j) t.labels.push_back(r.u8());
  }
  if (!r.exhausted()) throw parse_error(path.string() + ": trailing bytes after table");
  t.validate();
  return t;
}

void write_echl_csv(const std::filesystem::path& path, const LogitsTable& t) {
  t.validate();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw engine_error("cannot open for writing: " + path.string());
  f << "node_id,species_id";
  for (std::uint32_t j = 0; j < t.k; ++j) f << ",logit_" << j;
  for (std::uint32_t j = 0; j < t.k; ++j) f << ",label_" << j;
  f << "\n";
  char num[64];
  for (std::size_t i = 0; i < t.rows(); ++i) {
    f << t.node_id[i] << ',' << t.species_id[i];
    for (std::uint32_t j = 0; j < t.k; ++j) {
      std::snprintf(num, sizeof num, "%.9g", static_cast<double>(t.logits[i * t.k + j]));
      f << ',' << num;
    }
    for (std::uint32_t j = 0; j < t.k; ++j) {
      f << ',' << static_cast<int>(t.labels[i * t.k + j]);
    }
    f << "\n";
  }
  if (!f) throw engine_error("write failed: " + path.string());
}

EvalTable logits_eval_table(const LogitsTable& t) {
  t.validate();
  EvalTable e;
  e.n = t.rows();
  e.k = t.k;
  e.scores.assign(t.logits.begin(), t.logits.end());
  e.labels = t.labels;
  e.is_probability = false;
  return e;
}

EvalTable prob_eval_table(const LogitsTable& t) {
  EvalTable e = logits_eval_table(t);
  for (double& z : e.scores) {
    z = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  e.is_probability = true;
  return e;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw engine_error("cannot open for writing: " + path.string());
  f << doc.dump(2) << "\n";
  if (!f) throw engine_error("write failed: " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw parse_error("cannot open: " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(path.string() + ": " + e.what());
  }
}

}  // namespace echl
