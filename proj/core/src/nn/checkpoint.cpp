#include "cmllm/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cmllm::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'M', 'L', 'L', 'M', 'C', 'K', 'P'};

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
  U value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(U))) throw CompatibilityError("truncated checkpoint");
  return value;
}

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

}  // namespace

std::vector<double> NamedArray::as_double() const {
  const std::size_t n = shape_size(shape);
  std::vector<double> out(n);
  if (dtype == DType::F32) {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + i * 4, 4);
      out[i] = f;
    }
  } else {
    std::memcpy(out.data(), bytes.data(), n * 8);
  }
  return out;
}

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = ckpt.config.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint64_t>(out, ckpt.arrays.size());
  for (const auto& a : ckpt.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw CompatibilityError("not a cmllm checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CompatibilityError("unsupported checkpoint format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto header_len = get<std::uint64_t>(in);
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) throw CompatibilityError("truncated checkpoint header");
  try {
    ckpt.config = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw CompatibilityError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = get<std::uint32_t>(in);
    a.name.resize(name_len);
    if (!in.read(a.name.data(), name_len)) throw CompatibilityError("truncated checkpoint");
    const auto dtype = get<std::uint8_t>(in);
    if (dtype > 1) throw CompatibilityError("unknown dtype in checkpoint array '" + a.name + "'");
    a.dtype = static_cast<DType>(dtype);
    const auto rank = get<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
    a.bytes.resize(shape_size(a.shape) * dtype_size(a.dtype));
    if (!in.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()))) {
      throw CompatibilityError("truncated data for checkpoint array '" + a.name + "'");
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_checkpoint(in);
}

template <typename T>
NamedArray to_named_array(const std::string& name, const Tensor<T>& t) {
  NamedArray a;
  a.name = name;
  a.dtype = sizeof(T) == 4 ? DType::F32 : DType::F64;
  a.shape = t.shape();
  a.bytes.resize(t.size() * sizeof(T));
  std::memcpy(a.bytes.data(), t.data(), a.bytes.size());
  return a;
}

template <typename T>
std::vector<NamedArray> export_parameters(const ParameterStore<T>& store) {
  std::vector<NamedArray> out;
  for (const auto& p : store) out.push_back(to_named_array(p.name, p.value));
  return out;
}

template <typename T>
void import_parameters(ParameterStore<T>& store, const Checkpoint& ckpt) {
  for (auto& p : store) {
    const NamedArray* a = ckpt.find(p.name);
    if (!a) throw CompatibilityError("checkpoint lacks parameter '" + p.name + "'");
    if (a->shape != p.value.shape()) {
      throw CompatibilityError("shape mismatch for '" + p.name + "': checkpoint " + shape_string(a->shape) +
                               ", model " + shape_string(p.value.shape()));
    }
    if (a->dtype == (sizeof(T) == 4 ? DType::F32 : DType::F64)) {
      std::memcpy(p.value.data(), a->bytes.data(), a->bytes.size());
    } else {
      const auto values = a->as_double();
      for (std::size_t i = 0; i < values.size(); ++i) p.value[i] = static_cast<T>(values[i]);
    }
  }
}

template NamedArray to_named_array<float>(const std::string&, const Tensor<float>&);
template NamedArray to_named_array<double>(const std::string&, const Tensor<double>&);
template std::vector<NamedArray> export_parameters<float>(const ParameterStore<float>&);
template std::vector<NamedArray> export_parameters<double>(const ParameterStore<double>&);
template void import_parameters<float>(ParameterStore<float>&, const Checkpoint&);
template void import_parameters<double>(ParameterStore<double>&, const Checkpoint&);

}  // namespace cmllm::nn
