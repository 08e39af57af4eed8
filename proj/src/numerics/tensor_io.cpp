#include "capsfield/numerics/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "capsfield/errors.hpp"

namespace capsfield::numerics {

namespace {

constexpr std::array<char, 4> kMagicF32{'C', 'F', 'T', '1'};
constexpr std::array<char, 4> kMagicF64{'C', 'F', 'T', '2'};
constexpr std::uint32_t kMaxRank = 16;

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw FormatError(std::string("truncated tensor record while reading ") + what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor, StorageType type) {
  const auto& magic = type == StorageType::f32 ? kMagicF32 : kMagicF64;
  out.write(magic.data(), magic.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : tensor.data()) {
    if (type == StorageType::f32)
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw FormatError("failed writing tensor record");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in) throw FormatError("truncated tensor record: missing magic");
  const bool f32 = magic == kMagicF32;
  if (!f32 && magic != kMagicF64) throw FormatError("bad tensor magic bytes");
  const auto rank = get_le<std::uint32_t>(in, "rank");
  if (rank == 0 || rank > kMaxRank) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_le<std::uint32_t>(in, "dims");
    if (d == 0) throw FormatError("zero tensor dimension");
  }
  if (shape_size(shape) > (std::size_t{1} << 30)) throw FormatError("implausible tensor size");
  std::vector<double> data(shape_size(shape));
  for (double& v : data) {
    if (f32)
      v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, "payload")));
    else
      v = std::bit_cast<double>(get_le<std::uint64_t>(in, "payload"));
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor, StorageType type) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor, type);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace capsfield::numerics
