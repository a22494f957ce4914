// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "roqlora/quant.hpp"

namespace roqlora {

// QLT1 tensor container, all integers little-endian:
//
//   "QLT1" | u32 record_count
//   record_count x { u32 name_len | name (UTF-8) | u8 dtype | u32 rank |
//                    rank x u64 dim | u64 offset | u64 length }
//   payload (offsets relative to the first payload byte)
//
// NF4 payload: packed codes (ceil(N/2) bytes) then the scale section:
//   u32 block_size | u8 dq_flag |
//     dq_flag == 0: block_count x f32 scale
//     dq_flag == 1: u32 dq_block_size | f32 anchor | block_count x u8 code |
//                   dq_block_count x f32 block constant

enum class DType : std::uint8_t { F32 = 0, F64 = 1, NF4 = 2 };

const char* dtype_name(DType dtype) noexcept;

struct DenseTensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

class TensorContainer {
public:
    using Entry = std::variant<DenseTensor, quant::QuantizedTensor>;

    /// Dense tensors are stored as f32 unless `dtype` says F64.
    void put(const std::string& name, DenseTensor tensor, DType dtype = DType::F32);
    void put(const std::string& name, quant::QuantizedTensor tensor);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    DType dtype(const std::string& name) const;
    const Entry& at(const std::string& name) const;
    /// Dense view of any entry (NF4 entries are dequantized).
    DenseTensor dense(const std::string& name) const;
    const quant::QuantizedTensor& quantized(const std::string& name) const;

    std::vector<std::string> names() const;
    std::size_t size() const noexcept { return entries_.size(); }

    void write(std::ostream& out) const;
    void save(const std::filesystem::path& path) const;
    static TensorContainer read(std::istream& in);
    static TensorContainer load(const std::filesystem::path& path);

private:
    struct Slot {
        DType dtype;
        Entry entry;
    };
    std::map<std::string, Slot> entries_;
};

}  // namespace roqlora
