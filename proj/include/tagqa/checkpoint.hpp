#pragma once

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tagqa/tagger.hpp"

namespace tagqa {

// Checkpoint file layout (all integers little-endian):
//   "STQA" | u32 version | u64 json_len | canonical JSON metadata |
//   u64 tensor_count | tensors
// Each tensor: u64 name_len | name | u64 rank | u64 dims[rank] |
//   row-major f64 payload.
constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

inline void write_u64(std::ostream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

inline void write_f64(std::ostream& out, double v) {
  uint64_t bits = 0;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& in) {
  const uint64_t bits = read_u64(in);
  double v = 0;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string hash_to_hex(uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

inline uint64_t hash_from_hex(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write("STQA", 4);
  detail::write_u32(out, kCheckpointVersion);

  nlohmann::json meta;  // sorted keys: canonical
  meta["encoder"] = {{"kind", to_string(ckpt.model.encoder.kind)},
                     {"embed_dim", ckpt.model.encoder.embed_dim},
                     {"hidden_dim", ckpt.model.encoder.hidden_dim}};
  meta["head"] = {{"kind", to_string(ckpt.model.head.kind)},
                  {"lstm_hidden", ckpt.model.head.lstm_hidden}};
  meta["vocab_size"] = ckpt.model.vocab_size;
  meta["vocab_hash"] = detail::hash_to_hex(ckpt.vocab_hash);
  meta["stage"] = ckpt.stage;
  meta["seed"] = ckpt.seed;
  meta["steps"] = ckpt.steps;
  const std::string json = meta.dump();
  detail::write_u64(out, json.size());
  out.write(json.data(), static_cast<std::streamsize>(json.size()));

  size_t count = 0;
  for_each_tensor(ckpt.model, [&](const char*, const Mat&) { ++count; });
  detail::write_u64(out, count);
  for_each_tensor(ckpt.model, [&](const char* name, const Mat& t) {
    const std::string n(name);
    detail::write_u64(out, n.size());
    out.write(n.data(), static_cast<std::streamsize>(n.size()));
    detail::write_u64(out, 2);
    detail::write_u64(out, static_cast<uint64_t>(t.rows()));
    detail::write_u64(out, static_cast<uint64_t>(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        detail::write_f64(out, t(r, c));
      }
    }
  });
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  save_checkpoint(out, ckpt);
  if (!out) throw DataError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "STQA") {
    throw DataError("checkpoint: bad magic, not a checkpoint file");
  }
  const uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unknown format version " +
                    std::to_string(version));
  }
  const uint64_t json_len = detail::read_u64(in);
  std::string json_text(json_len, '\0');
  in.read(json_text.data(), static_cast<std::streamsize>(json_len));
  if (!in) throw DataError("checkpoint: truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata JSON: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    EncoderSpec enc;
    enc.kind = encoder_kind_from_string(meta.at("encoder").at("kind"));
    enc.embed_dim = meta.at("encoder").at("embed_dim").get<int>();
    enc.hidden_dim = meta.at("encoder").at("hidden_dim").get<int>();
    HeadSpec head;
    head.kind = head_kind_from_string(meta.at("head").at("kind"));
    head.lstm_hidden = meta.at("head").at("lstm_hidden").get<int>();
    const int vocab_size = meta.at("vocab_size").get<int>();
    ckpt.vocab_hash = detail::hash_from_hex(meta.at("vocab_hash"));
    ckpt.stage = meta.at("stage").get<std::string>();
    ckpt.seed = meta.at("seed").get<uint64_t>();
    ckpt.steps = meta.at("steps").get<uint64_t>();
    Rng rng(0);
    ckpt.model = TaggerModel::init(enc, head, vocab_size, rng);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: incomplete metadata: ") +
                    e.what());
  }

  const uint64_t count = detail::read_u64(in);
  std::map<std::string, Mat> tensors;
  for (uint64_t k = 0; k < count; ++k) {
    const uint64_t name_len = detail::read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const uint64_t rank = detail::read_u64(in);
    if (rank != 2) {
      throw DataError("checkpoint: tensor " + name + " has rank " +
                      std::to_string(rank) + ", expected 2");
    }
    const uint64_t rows = detail::read_u64(in);
    const uint64_t cols = detail::read_u64(in);
    Mat t(rows, cols);
    for (uint64_t r = 0; r < rows; ++r) {
      for (uint64_t c = 0; c < cols; ++c) {
        t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            detail::read_f64(in);
      }
    }
    tensors.emplace(std::move(name), std::move(t));
  }

  for_each_tensor(ckpt.model, [&](const char* name, Mat& target) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw DataError(std::string("checkpoint: missing tensor ") + name);
    }
    if (it->second.rows() != target.rows() ||
        it->second.cols() != target.cols()) {
      throw DataError(std::string("checkpoint: tensor ") + name +
                      " has unexpected shape");
    }
    target = it->second;
  });
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace tagqa
