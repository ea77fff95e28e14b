#include "scd/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "config_json.hpp"
#include "scd/error.hpp"

namespace scd {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'C', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::size_t kPreambleBytes = 8 + 4 + 8;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

void append_array(std::string& payload, std::vector<ArrayEntry>& manifest, std::uint64_t& offset,
                  const std::string& name, const Tensor& t) {
  manifest.push_back({name, t.shape(), offset, t.size()});
  for (double v : t.values()) put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  offset += t.size();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "io_error", "cannot open checkpoint " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Parsed {
  CheckpointMeta meta;
  std::size_t payload_start = 0;
};

Parsed parse_header(const std::string& bytes, const std::string& path) {
  require(bytes.size() >= kPreambleBytes, "checkpoint_truncated", path + ": file ends inside the preamble");
  require(std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) == 0, "checkpoint_format",
          path + ": not a checkpoint (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto version = get_le<std::uint32_t>(p + 8);
  require(version == kCheckpointVersion, "checkpoint_version",
          path + ": format version " + std::to_string(version) + ", expected " +
              std::to_string(kCheckpointVersion));
  const auto header_len = get_le<std::uint64_t>(p + 12);
  require(bytes.size() - kPreambleBytes >= header_len, "checkpoint_truncated",
          path + ": file ends inside the header");

  json h;
  try {
    h = json::parse(bytes.substr(kPreambleBytes, header_len));
    Parsed out;
    out.meta.version = version;
    read_model_config(h.at("model"), out.meta.model);
    read_train_config(h.at("train"), out.meta.train);
    out.meta.epoch = h.at("epoch").get<std::size_t>();
    out.meta.optimizer_step = h.at("optimizer_step").get<std::uint64_t>();
    for (const auto& a : h.at("arrays")) {
      ArrayEntry e;
      e.name = a.at("name").get<std::string>();
      e.shape = a.at("shape").get<std::vector<std::size_t>>();
      e.offset = a.at("offset").get<std::uint64_t>();
      e.count = a.at("count").get<std::uint64_t>();
      require(shape_product(e.shape) == e.count, "checkpoint_format",
              path + ": array " + e.name + " shape does not match its count");
      out.meta.arrays.push_back(std::move(e));
    }
    out.payload_start = kPreambleBytes + header_len;
    return out;
  } catch (const json::exception& e) {
    fail("checkpoint_format", path + ": unreadable header: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train,
                     std::size_t epoch, const OptimizerState& optimizer) {
  const ParamSet& ps = model.params;
  require(optimizer.m.size() == ps.size() && optimizer.v.size() == ps.size(), "invalid_argument",
          "optimizer state does not match the parameter set");
  std::string payload;
  std::vector<ArrayEntry> manifest;
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) append_array(payload, manifest, offset, ps.name(i), ps.at(i));
  for (std::size_t i = 0; i < ps.size(); ++i)
    append_array(payload, manifest, offset, "adam.m/" + ps.name(i), optimizer.m[i]);
  for (std::size_t i = 0; i < ps.size(); ++i)
    append_array(payload, manifest, offset, "adam.v/" + ps.name(i), optimizer.v[i]);

  json arrays = json::array();
  for (const auto& e : manifest)
    arrays.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"count", e.count}});
  const json header = {{"model", model_config_json(model.config)},
                       {"train", train_config_json(train)},
                       {"epoch", epoch},
                       {"optimizer_step", optimizer.step},
                       {"arrays", arrays}};
  const std::string text = header.dump();

  std::string out(kMagic.begin(), kMagic.end());
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += payload;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), "io_error", "cannot write checkpoint " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), "io_error", "write failed for " + path);
}

CheckpointMeta inspect_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "io_error", "cannot open checkpoint " + path);
  std::string pre(kPreambleBytes, '\0');
  in.read(pre.data(), static_cast<std::streamsize>(pre.size()));
  pre.resize(static_cast<std::size_t>(in.gcount()));
  if (pre.size() == kPreambleBytes) {
    const auto len = get_le<std::uint64_t>(reinterpret_cast<const unsigned char*>(pre.data()) + 12);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    header.resize(static_cast<std::size_t>(in.gcount()));
    pre += header;
  }
  return parse_header(pre, path).meta;
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  Parsed parsed = parse_header(bytes, path);
  const CheckpointMeta& meta = parsed.meta;

  std::uint64_t total = 0;
  for (const auto& e : meta.arrays) {
    require(e.offset == total, "checkpoint_format", path + ": array " + e.name + " is not contiguous");
    total += e.count;
  }
  const std::size_t have = bytes.size() - parsed.payload_start;
  require(have >= total * 4, "checkpoint_truncated",
          path + ": payload has " + std::to_string(have) + " bytes, header needs " + std::to_string(total * 4));
  require(have == total * 4, "checkpoint_format", path + ": trailing bytes after the payload");

  Checkpoint ck{meta, init_model(meta.model), {}};
  ck.optimizer = make_optimizer_state(ck.model.params);
  ck.optimizer.step = meta.optimizer_step;
  ParamSet& ps = ck.model.params;

  auto fill = [&](const std::string& name, Tensor& dst) {
    auto it = std::find_if(meta.arrays.begin(), meta.arrays.end(),
                           [&](const ArrayEntry& e) { return e.name == name; });
    require(it != meta.arrays.end(), "checkpoint_shape", path + ": array " + name + " is missing");
    require(it->shape == dst.shape(), "checkpoint_shape",
            path + ": array " + name + " has shape " + shape_string(it->shape) + ", model expects " +
                shape_string(dst.shape()));
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + parsed.payload_start + it->offset * 4;
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i)));
  };
  for (std::size_t i = 0; i < ps.size(); ++i) {
    fill(ps.name(i), ps.at(i));
    fill("adam.m/" + ps.name(i), ck.optimizer.m[i]);
    fill("adam.v/" + ps.name(i), ck.optimizer.v[i]);
  }
  require(meta.arrays.size() == 3 * ps.size(), "checkpoint_shape",
          path + ": checkpoint holds arrays the model does not have");
  return ck;
}

}  // namespace scd
