#pragma once

#include <bit>
#include <fstream>
#include <map>

#include "segstack/model.hpp"
#include "segstack/optim.hpp"

namespace segstack {

// Binary parameter container: magic "SGSK", format version u32, then one
// record per tensor: name length (u32) + UTF-8 name, shape as four u32,
// raw little-endian f32 data. Records run to end of file.

inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'S', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void wr_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t rd_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is.good()) fail("checkpoint: truncated file (u32)");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void wr_f32s(std::ostream& os, const float* data, std::int64_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), n * 4);
  } else {
    for (std::int64_t i = 0; i < n; ++i) wr_u32(os, std::bit_cast<std::uint32_t>(data[i]));
  }
}

inline void rd_f32s(std::istream& is, float* data, std::int64_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(data), n * 4);
    if (!is.good()) fail("checkpoint: truncated file (data)");
  } else {
    for (std::int64_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(rd_u32(is));
  }
}

}  // namespace detail

struct NamedTensorRef {
  std::string name;
  const Tensor* tensor;
};

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensorRef>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "write_checkpoint: cannot open ", path);
  os.write(kCheckpointMagic, 4);
  detail::wr_u32(os, kCheckpointVersion);
  for (const auto& r : records) {
    detail::wr_u32(os, std::uint32_t(r.name.size()));
    os.write(r.name.data(), std::streamsize(r.name.size()));
    const Shape4 s = r.tensor->shape();
    detail::wr_u32(os, std::uint32_t(s.n));
    detail::wr_u32(os, std::uint32_t(s.c));
    detail::wr_u32(os, std::uint32_t(s.h));
    detail::wr_u32(os, std::uint32_t(s.w));
    detail::wr_f32s(os, r.tensor->data(), r.tensor->numel());
  }
  check(os.good(), "write_checkpoint: write failed for ", path);
}

inline std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_checkpoint: cannot open ", path);
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, kCheckpointMagic, 4) == 0,
        "read_checkpoint: bad magic in ", path);
  const std::uint32_t version = detail::rd_u32(is);
  check(version == kCheckpointVersion, "read_checkpoint: unsupported version ", version);

  std::map<std::string, Tensor> out;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t name_len = detail::rd_u32(is);
    check(name_len > 0 && name_len < 4096, "read_checkpoint: implausible name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is.good()) fail("read_checkpoint: truncated name");
    Shape4 s;
    s.n = int(detail::rd_u32(is));
    s.c = int(detail::rd_u32(is));
    s.h = int(detail::rd_u32(is));
    s.w = int(detail::rd_u32(is));
    Tensor t(s);
    detail::rd_f32s(is, t.data(), t.numel());
    check(!out.count(name), "read_checkpoint: duplicate record ", name);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

// Model state: every parameter and batch-norm running statistic, plus a
// meta record carrying the BN readiness flag.
inline void save_model(const std::string& path, const UNet& net) {
  std::vector<NamedTensorRef> records;
  for (const auto& nt : net.state_tensors()) records.push_back({nt.name, nt.tensor});
  Tensor ready = Tensor::scalar(net.bn_ready() ? 1.0f : 0.0f);
  records.push_back({"meta/bn_ready", &ready});
  write_checkpoint(path, records);
}

inline void load_model(const std::string& path, UNet& net) {
  auto records = read_checkpoint(path);
  for (const auto& nt : net.state_tensors()) {
    auto it = records.find(nt.name);
    if (it == records.end()) fail("load_model: missing record ", nt.name, " in ", path);
    check(it->second.shape() == nt.tensor->shape(), "load_model: shape mismatch for ", nt.name,
          ": file ", it->second.shape().str(), " vs model ", nt.tensor->shape().str());
    std::memcpy(nt.tensor->data(), it->second.data(),
                std::size_t(it->second.numel()) * sizeof(float));
    records.erase(it);
  }
  auto ready = records.find("meta/bn_ready");
  check(ready != records.end(), "load_model: missing meta/bn_ready in ", path);
  if (ready->second.item() != 0.0f) net.force_bn_ready();
  records.erase(ready);
  if (!records.empty()) fail("load_model: unexpected record ", records.begin()->first);
}

// Optimizer state rides in the same container: per-parameter first/second
// moments under "/m" and "/v" suffixes, the step counter, and the number of
// completed epochs so a resumed run continues its numbering.
inline void save_optimizer(const std::string& path, const UNet& net, const NadamState& state,
                           int epochs_done) {
  std::vector<Parameter*> params = const_cast<UNet&>(net).parameters();
  check(params.size() == state.size(), "save_optimizer: state/parameter count mismatch");
  std::vector<NamedTensorRef> records;
  NadamState& st = const_cast<NadamState&>(state);
  for (std::size_t i = 0; i < params.size(); ++i) {
    records.push_back({params[i]->name + "/m", &st.first_moment(i)});
    records.push_back({params[i]->name + "/v", &st.second_moment(i)});
  }
  Tensor t_step = Tensor::scalar(float(state.step_count()));
  Tensor t_epochs = Tensor::scalar(float(epochs_done));
  records.push_back({"nadam/t", &t_step});
  records.push_back({"train/epochs_done", &t_epochs});
  write_checkpoint(path, records);
}

inline int load_optimizer(const std::string& path, UNet& net, NadamState& state) {
  auto records = read_checkpoint(path);
  const auto& params = net.parameters();
  check(params.size() == state.size(), "load_optimizer: state/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (const char* suffix : {"/m", "/v"}) {
      const std::string name = params[i]->name + suffix;
      auto it = records.find(name);
      if (it == records.end()) fail("load_optimizer: missing record ", name);
      Tensor& dst = suffix[1] == 'm' ? state.first_moment(i) : state.second_moment(i);
      check(it->second.shape() == dst.shape(), "load_optimizer: shape mismatch for ", name);
      std::memcpy(dst.data(), it->second.data(), std::size_t(dst.numel()) * sizeof(float));
    }
  }
  auto t_it = records.find("nadam/t");
  check(t_it != records.end(), "load_optimizer: missing nadam/t");
  state.restore_step(long(t_it->second.item()));
  auto e_it = records.find("train/epochs_done");
  check(e_it != records.end(), "load_optimizer: missing train/epochs_done");
  return int(e_it->second.item());
}

}  // namespace segstack
