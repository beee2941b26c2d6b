#include "cfn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace cfn {
namespace {

constexpr char kMagic[4] = {'C', 'F', 'N', '1'};


class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  template <typename T>
  void scalars(std::span<const T> values) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (const T v : values) {
      const auto bits = std::bit_cast<Bits>(v);
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
      }
    }
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("truncated checkpoint: ") + what + " at byte offset " +
                        std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> scalars(std::size_t count, const char* what) {
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    if (count > (in_.size() - pos_) / sizeof(T)) need(count * sizeof(T), what);
    std::vector<T> out(count);
    for (auto& v : out) {
      Bits bits = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<Bits>(in_[pos_ + i]) << (8 * i);
      pos_ += sizeof(T);
      v = std::bit_cast<T>(bits);
    }
    return out;
  }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

DType dtype(const AnyTensor& tensor) {
  return std::holds_alternative<TensorF>(tensor) ? DType::f32 : DType::f64;
}

const Shape& shape(const AnyTensor& tensor) {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, tensor);
}

std::vector<std::uint8_t> checkpoint_save(std::span<const CheckpointEntry> entries) {
  std::set<std::string> seen;
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& entry : entries) {
    if (!seen.insert(entry.name).second) throw FormatError("duplicate name '" + entry.name + "'");
    w.u32(static_cast<std::uint32_t>(entry.name.size()));
    w.bytes(entry.name.data(), entry.name.size());
    w.u8(static_cast<std::uint8_t>(dtype(entry.tensor)));
    const auto& dims = shape(entry.tensor);
    if (dims.empty()) throw FormatError("entry '" + entry.name + "' holds an empty tensor");
    w.u8(static_cast<std::uint8_t>(dims.size()));
    for (const auto d : dims) w.u32(static_cast<std::uint32_t>(d));
    std::visit([&](const auto& t) { w.scalars(t.data()); }, entry.tensor);
  }
  return w.take();
}

std::vector<CheckpointEntry> checkpoint_load(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic");
  r.text(4, "magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32("entry count");
  std::vector<CheckpointEntry> entries;
  std::set<std::string> seen;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = r.u32("name length");
    auto name = r.text(name_len, "name");
    if (!seen.insert(name).second) throw FormatError("duplicate name '" + name + "'");
    const auto code = r.u8("dtype");
    if (code > 1) {
      throw FormatError("unknown dtype code " + std::to_string(code) + " for '" + name + "'");
    }
    const auto rank = r.u8("rank");
    Shape dims(rank);
    for (auto& d : dims) d = r.u32("dims");
    try {
      validate_shape(dims);
    } catch (const ShapeError& err) {
      throw FormatError("entry '" + name + "': " + err.what());
    }
    const auto n = element_count(dims);
    if (code == 0) {
      entries.push_back({std::move(name), TensorF(dims, r.scalars<float>(n, "payload"))});
    } else {
      entries.push_back({std::move(name), TensorD(dims, r.scalars<double>(n, "payload"))});
    }
  }
  if (!r.done()) {
    throw FormatError("trailing bytes after last entry at byte offset " + std::to_string(r.position()));
  }
  return entries;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  const auto bytes = checkpoint_save(entries);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_load(bytes);
}

template <typename T>
const Tensor<T>& find_tensor(std::span<const CheckpointEntry> entries, const std::string& name) {
  for (const auto& entry : entries) {
    if (entry.name != name) continue;
    if (const auto* t = std::get_if<Tensor<T>>(&entry.tensor)) return *t;
    throw FormatError("entry '" + name + "' has unexpected dtype");
  }
  throw FormatError("checkpoint has no entry '" + name + "'");
}

template const TensorF& find_tensor<float>(std::span<const CheckpointEntry>, const std::string&);
template const TensorD& find_tensor<double>(std::span<const CheckpointEntry>, const std::string&);

}  // namespace cfn
