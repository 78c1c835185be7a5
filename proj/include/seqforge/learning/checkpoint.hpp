#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "seqforge/learning/optimizer.hpp"

namespace seqforge {

/// Checkpoint file:
///
///   seqforge-checkpoint
///   version 1
///   meta <key> <value>                         (any number)
///   tensor <name> <byte offset> <count> <d0>x<d1>...
///   end
///   <flat little-endian float32 data>
///
/// Offsets are relative to the first byte after the "end" line. Optimizer
/// moments are stored as tensors named optimizer/m/<param> and
/// optimizer/v/<param>.
struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };
  std::vector<Entry> tensors;
  std::map<std::string, std::string> meta;

  static constexpr int kVersion = 1;

  const Entry* find(const std::string& name) const {
    for (const auto& e : tensors)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {
inline std::string shape_token(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape_token(const std::string& tok) {
  Shape s;
  if (tok == "scalar") return s;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(static_cast<std::size_t>(std::stoull(part)));
  return s;
}

inline void put_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}
}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string header = "seqforge-checkpoint\nversion " + std::to_string(Checkpoint::kVersion) + "\n";
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ContractError("checkpoint: meta key/value contains a separator: '" + k + "'");
    header += "meta " + k + " " + v + "\n";
  }
  std::string data;
  for (const auto& e : ckpt.tensors) {
    if (e.name.find_first_of(" \n") != std::string::npos)
      throw ContractError("checkpoint: tensor name contains whitespace: '" + e.name + "'");
    if (numel(e.shape) != e.values.size()) throw DimensionError("checkpoint: '" + e.name + "' shape/value mismatch");
    header += "tensor " + e.name + " " + std::to_string(data.size()) + " " + std::to_string(e.values.size()) + " " +
              detail::shape_token(e.shape) + "\n";
    for (float v : e.values) detail::put_le(data, v);
  }
  header += "end\n";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write checkpoint '" + path + "'");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IngestionError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto bad = [&](const std::string& why) { return IngestionError("checkpoint '" + path + "': " + why); };

  std::size_t pos = 0;
  const auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw bad("truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "seqforge-checkpoint") throw bad("not a checkpoint file");
  if (next_line() != "version " + std::to_string(Checkpoint::kVersion)) throw bad("unsupported version");

  Checkpoint ckpt;
  struct Pending {
    std::size_t offset, count;
  };
  std::vector<Pending> where;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "tensor") {
      Checkpoint::Entry e;
      Pending p{};
      std::string shape;
      if (!(ls >> e.name >> p.offset >> p.count >> shape)) throw bad("malformed line '" + line + "'");
      e.shape = detail::parse_shape_token(shape);
      if (numel(e.shape) != p.count) throw bad("count/shape mismatch for '" + e.name + "'");
      ckpt.tensors.push_back(std::move(e));
      where.push_back(p);
    } else {
      throw bad("unexpected header line '" + line + "'");
    }
  }
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  const std::size_t available = bytes.size() - pos;
  for (std::size_t i = 0; i < where.size(); ++i) {
    if (where[i].offset + 4 * where[i].count > available) throw bad("data section truncated");
    auto& values = ckpt.tensors[i].values;
    values.resize(where[i].count);
    for (std::size_t j = 0; j < where[i].count; ++j) values[j] = detail::get_le(data + where[i].offset + 4 * j);
  }
  return ckpt;
}

/// Snapshot of every parameter (and optimizer moments, if given).
template <typename T>
Checkpoint make_checkpoint(const ParameterStore<T>& store, const std::vector<const Optimizer<T>*>& optimizers = {}) {
  Checkpoint c;
  for (const auto& e : store.entries())
    c.tensors.push_back({e.name, e.value.shape(), std::vector<float>(e.value.data().begin(), e.value.data().end())});
  for (std::size_t i = 0; i < optimizers.size(); ++i) {
    const auto prefix = "optimizer" + std::to_string(i) + "/";
    c.meta[prefix + "steps"] = std::to_string(optimizers[i]->step_count());
    for (const auto& [name, slot] : optimizers[i]->slots()) {
      const Shape shape = store.at(name).shape();
      c.tensors.push_back({prefix + "m/" + name, shape, std::vector<float>(slot.m.begin(), slot.m.end())});
      c.tensors.push_back({prefix + "v/" + name, shape, std::vector<float>(slot.v.begin(), slot.v.end())});
    }
  }
  return c;
}

/// Loads parameter values into a store. Parameters that do not exist yet
/// are applied when the model first creates them.
template <typename T>
void restore_parameters(ParameterStore<T>& store, const Checkpoint& ckpt) {
  for (const auto& e : ckpt.tensors) {
    if (e.name.rfind("optimizer", 0) == 0) continue;
    store.set_pending(e.name, e.shape, std::vector<T>(e.values.begin(), e.values.end()));
  }
}

template <typename T>
void restore_optimizer(Optimizer<T>& opt, std::size_t index, const Checkpoint& ckpt) {
  const auto prefix = "optimizer" + std::to_string(index) + "/";
  if (auto it = ckpt.meta.find(prefix + "steps"); it != ckpt.meta.end()) opt.set_step_count(std::stoull(it->second));
  for (const auto& e : ckpt.tensors) {
    if (e.name.rfind(prefix + "m/", 0) == 0)
      opt.slots()[e.name.substr(prefix.size() + 2)].m.assign(e.values.begin(), e.values.end());
    else if (e.name.rfind(prefix + "v/", 0) == 0)
      opt.slots()[e.name.substr(prefix.size() + 2)].v.assign(e.values.begin(), e.values.end());
  }
}

}  // namespace seqforge
