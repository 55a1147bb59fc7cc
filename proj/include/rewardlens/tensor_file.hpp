#pragma once

// Named-tensor binary container used for model directories, distribution
// estimators and SAE states. Layout: magic "RLNS1", then per-tensor records
// of (u32 name length, name bytes, u32 rank, u32 dims..., f32 payload),
// all little-endian, until end of file.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rewardlens/common.hpp"
#include "rewardlens/numerics.hpp"

namespace rewardlens {

inline constexpr char kTensorMagic[5] = {'R', 'L', 'N', 'S', '1'};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& context)
      : bytes_(bytes), context_(context) {}

  bool at_end() const { return pos_ >= bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void f32_block(std::size_t count, std::vector<float>& out) {
    need(count * 4);
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b)
        bits = (bits << 8) |
               static_cast<unsigned char>(bytes_[pos_ + i * 4 + static_cast<std::size_t>(b)]);
      float f;
      std::memcpy(&f, &bits, 4);
      out[i] = f;
    }
    pos_ += count * 4;
  }

 private:
  void need(std::size_t n) {
    require(pos_ + n <= bytes_.size(), ErrorKind::corrupt_blob,
            context_ + ": truncated tensor record");
  }

  const std::string& bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

// write-temp-then-rename so partially written files are never observed
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::io, "rename failed for " + path.string());
}

class TensorFile {
 public:
  void add(const std::string& name, std::vector<std::uint32_t> dims,
           std::vector<float> data) {
    NamedTensor t;
    t.name = name;
    t.dims = std::move(dims);
    t.data = std::move(data);
    require(t.element_count() == t.data.size(), ErrorKind::shape_mismatch,
            "tensor " + name + ": dims do not match payload");
    require(!index_.count(name), ErrorKind::argument,
            "tensor " + name + " added twice");
    index_[name] = tensors_.size();
    tensors_.push_back(std::move(t));
  }

  void add_matrix(const std::string& name, const Mat& m) {
    std::vector<float> data(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        data[k++] = static_cast<float>(m(r, c));
    add(name,
        {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
        std::move(data));
  }

  void add_vector(const std::string& name, const Vec& v) {
    std::vector<float> data(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i)
      data[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    add(name, {static_cast<std::uint32_t>(v.size())}, std::move(data));
  }

  void add_scalar(const std::string& name, double v) {
    add(name, {1}, {static_cast<float>(v)});
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const NamedTensor& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::corrupt_blob,
            "missing tensor " + name);
    return tensors_[it->second];
  }

  Mat matrix(const std::string& name) const {
    const NamedTensor& t = get(name);
    require(t.dims.size() == 2, ErrorKind::corrupt_blob,
            "tensor " + name + ": expected rank 2");
    Mat m(t.dims[0], t.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<double>(t.data[k++]);
    return m;
  }

  Vec vector(const std::string& name) const {
    const NamedTensor& t = get(name);
    require(t.dims.size() == 1, ErrorKind::corrupt_blob,
            "tensor " + name + ": expected rank 1");
    Vec v(t.dims[0]);
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v[i] = static_cast<double>(t.data[static_cast<std::size_t>(i)]);
    return v;
  }

  double scalar(const std::string& name) const {
    const Vec v = vector(name);
    require(v.size() == 1, ErrorKind::corrupt_blob,
            "tensor " + name + ": expected a single element");
    return v[0];
  }

  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  std::string serialize() const {
    std::string out(kTensorMagic, sizeof(kTensorMagic));
    for (const auto& t : tensors_) {
      detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
      out += t.name;
      detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
      for (auto d : t.dims) detail::put_u32(out, d);
      for (float f : t.data) detail::put_f32(out, f);
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    atomic_write_file(path, serialize());
  }

  static TensorFile parse(const std::string& bytes, const std::string& context) {
    require(bytes.size() >= sizeof(kTensorMagic) &&
                std::memcmp(bytes.data(), kTensorMagic, sizeof(kTensorMagic)) == 0,
            ErrorKind::corrupt_blob, context + ": bad magic");
    detail::ByteReader reader(bytes, context);
    reader.str(sizeof(kTensorMagic));
    TensorFile tf;
    while (!reader.at_end()) {
      const std::uint32_t name_len = reader.u32();
      require(name_len > 0 && name_len < 4096, ErrorKind::corrupt_blob,
              context + ": implausible tensor name length");
      NamedTensor t;
      t.name = reader.str(name_len);
      const std::uint32_t rank = reader.u32();
      require(rank <= 4, ErrorKind::corrupt_blob,
              context + ": implausible tensor rank");
      t.dims.resize(rank);
      std::size_t count = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims[i] = reader.u32();
        count *= t.dims[i];
      }
      require(count < (1u << 28), ErrorKind::corrupt_blob,
              context + ": implausible tensor size");
      reader.f32_block(count, t.data);
      require(!tf.index_.count(t.name), ErrorKind::corrupt_blob,
              context + ": duplicate tensor " + t.name);
      tf.index_[t.name] = tf.tensors_.size();
      tf.tensors_.push_back(std::move(t));
    }
    return tf;
  }

  static TensorFile load(const std::filesystem::path& path) {
    return parse(read_file_bytes(path), path.string());
  }

 private:
  std::vector<NamedTensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace rewardlens
