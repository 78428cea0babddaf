#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "litevla/nf4.hpp"
#include "litevla/tensor.hpp"

namespace litevla {

// Container layout (all integers little-endian):
//
//   "LVLA" | u32 version | u32 meta_len | meta_len bytes of JSON metadata
//   u32 tensor_count | tensor_count table entries | payloads
//
// Table entry: u16 name_len, name, u8 dtype, u8 ndim, u64 dims[ndim],
// u32 block_size, u64 payload offset (from file start), u64 payload bytes.
//
// Payloads: fp32 -> raw floats. nf4 -> packed codes (low nibble = even
// element) then f32 scale per block. nf4+dq -> packed codes, u8 scale code per
// block, then f32 step[groups], f32 offset[groups].
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { FP32 = 0, NF4 = 1, NF4DQ = 2 };

const char* dtype_name(DType d);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using StoredTensor = std::variant<Tensor, NF4QuantizedTensor>;

DType dtype_of(const StoredTensor& t);

struct TableEntry {
    std::string name;
    DType dtype = DType::FP32;
    Shape shape;
    std::uint32_t block_size = 0;
    std::uint64_t offset = 0;
    std::uint64_t nbytes = 0;
};

class Checkpoint {
public:
    nlohmann::json metadata = nlohmann::json::object();

    void put(std::string name, StoredTensor value);
    bool contains(const std::string& name) const;
    const StoredTensor& get(const std::string& name) const;
    const Tensor& get_fp32(const std::string& name) const;

    const std::vector<std::pair<std::string, StoredTensor>>& tensors() const { return tensors_; }

    bool operator==(const Checkpoint&) const = default;

private:
    std::vector<std::pair<std::string, StoredTensor>> tensors_;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

// Reads only the header and tensor table.
std::vector<TableEntry> read_tensor_table(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace litevla
