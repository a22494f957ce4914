// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "roqlora/errors.hpp"

namespace roqlora {

namespace {

constexpr char kMagic[4] = {'Q', 'L', 'T', '1'};

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    const std::string& str() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const char* data, std::size_t size) : p_(data), end_(data + size) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(*p_++);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p_[i])) << (8 * i);
        p_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p_[i])) << (8 * i);
        p_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string string(std::size_t n) {
        need(n);
        std::string s(p_, n);
        p_ += n;
        return s;
    }
    std::vector<std::uint8_t> raw(std::size_t n) {
        need(n);
        std::vector<std::uint8_t> v(reinterpret_cast<const std::uint8_t*>(p_),
                                    reinterpret_cast<const std::uint8_t*>(p_) + n);
        p_ += n;
        return v;
    }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
    const char* position() const { return p_; }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError("QLT1: unexpected end of data");
    }
    const char* p_;
    const char* end_;
};

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void encode_nf4(Writer& w, const quant::QuantizedTensor& qt) {
    const auto packed = qt.packed_codes();
    w.bytes(packed.data(), packed.size());
    w.u32(static_cast<std::uint32_t>(qt.block_size()));
    if (const auto* plain = std::get_if<std::vector<float>>(&qt.scales())) {
        w.u8(0);
        for (float s : *plain) w.f32(s);
    } else {
        const auto& dq = std::get<quant::DqScales>(qt.scales());
        w.u8(1);
        w.u32(static_cast<std::uint32_t>(dq.block_size()));
        w.f32(dq.anchor());
        w.bytes(dq.codes().data(), dq.codes().size());
        for (float u : dq.upper()) w.f32(u);
    }
}

quant::QuantizedTensor decode_nf4(Reader& r, std::vector<std::size_t> shape) {
    const std::size_t n = element_count(shape);
    auto packed = r.raw((n + 1) / 2);
    const std::size_t block_size = r.u32();
    if (block_size == 0) throw FormatError("QLT1: NF4 block size is 0");
    const std::size_t blocks = (n + block_size - 1) / block_size;
    const std::uint8_t flag = r.u8();
    if (flag == 0) {
        std::vector<float> scales(blocks);
        for (auto& s : scales) s = r.f32();
        return quant::QuantizedTensor::from_packed(std::move(shape), block_size, std::move(packed),
                                                   std::move(scales));
    }
    if (flag != 1) throw FormatError("QLT1: unknown NF4 scale flag " + std::to_string(flag));
    const std::size_t dq_block = r.u32();
    if (dq_block == 0) throw FormatError("QLT1: DQ block size is 0");
    const float anchor = r.f32();
    auto codes = r.raw(blocks);
    std::vector<float> upper((blocks + dq_block - 1) / dq_block);
    for (auto& u : upper) u = r.f32();
    auto dq = quant::DqScales::from_parts(dq_block, anchor, std::move(codes), std::move(upper));
    return quant::QuantizedTensor::from_packed(std::move(shape), block_size, std::move(packed),
                                               std::move(dq));
}

}  // namespace

const char* dtype_name(DType dtype) noexcept {
    switch (dtype) {
        case DType::F32: return "f32";
        case DType::F64: return "f64";
        case DType::NF4: return "nf4";
    }
    return "?";
}

void TensorContainer::put(const std::string& name, DenseTensor tensor, DType dtype) {
    if (dtype == DType::NF4) throw InvalidArgument("put: dense tensors cannot be stored as nf4");
    if (tensor.shape.empty()) tensor.shape = {tensor.values.size()};
    if (element_count(tensor.shape) != tensor.values.size()) {
        throw InvalidArgument("put: shape does not match value count for '" + name + "'");
    }
    entries_.insert_or_assign(name, Slot{dtype, std::move(tensor)});
}

void TensorContainer::put(const std::string& name, quant::QuantizedTensor tensor) {
    entries_.insert_or_assign(name, Slot{DType::NF4, std::move(tensor)});
}

DType TensorContainer::dtype(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidArgument("container has no tensor '" + name + "'");
    return it->second.dtype;
}

const TensorContainer::Entry& TensorContainer::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InvalidArgument("container has no tensor '" + name + "'");
    return it->second.entry;
}

DenseTensor TensorContainer::dense(const std::string& name) const {
    const Entry& e = at(name);
    if (const auto* d = std::get_if<DenseTensor>(&e)) return *d;
    const auto& qt = std::get<quant::QuantizedTensor>(e);
    return DenseTensor{qt.shape(), quant::dequantize(qt)};
}

const quant::QuantizedTensor& TensorContainer::quantized(const std::string& name) const {
    const auto* qt = std::get_if<quant::QuantizedTensor>(&at(name));
    if (qt == nullptr) throw InvalidArgument("tensor '" + name + "' is not nf4");
    return *qt;
}

std::vector<std::string> TensorContainer::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, slot] : entries_) out.push_back(name);
    return out;
}

void TensorContainer::write(std::ostream& out) const {
    Writer payload;
    Writer header;
    header.bytes(kMagic, 4);
    header.u32(static_cast<std::uint32_t>(entries_.size()));

    for (const auto& [name, slot] : entries_) {
        const std::size_t offset = payload.size();
        std::vector<std::size_t> shape;
        if (const auto* d = std::get_if<DenseTensor>(&slot.entry)) {
            shape = d->shape;
            for (double v : d->values) {
                if (slot.dtype == DType::F32) payload.f32(static_cast<float>(v));
                else payload.f64(v);
            }
        } else {
            const auto& qt = std::get<quant::QuantizedTensor>(slot.entry);
            shape = qt.shape();
            encode_nf4(payload, qt);
        }
        header.u32(static_cast<std::uint32_t>(name.size()));
        header.bytes(name.data(), name.size());
        header.u8(static_cast<std::uint8_t>(slot.dtype));
        header.u32(static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) header.u64(d);
        header.u64(offset);
        header.u64(payload.size() - offset);
    }
    out.write(header.str().data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.str().data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("QLT1: write failed");
}

void TensorContainer::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    write(out);
}

TensorContainer TensorContainer::read(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string data = ss.str();
    Reader r(data.data(), data.size());
    if (r.string(4) != std::string(kMagic, 4)) throw FormatError("QLT1: bad magic");

    struct Record {
        std::string name;
        DType dtype;
        std::vector<std::size_t> shape;
        std::uint64_t offset, length;
    };
    const std::uint32_t count = r.u32();
    std::vector<Record> records;
    for (std::uint32_t i = 0; i < count; ++i) {
        Record rec;
        rec.name = r.string(r.u32());
        const std::uint8_t tag = r.u8();
        if (tag > 2) throw FormatError("QLT1: unknown dtype tag " + std::to_string(tag));
        rec.dtype = static_cast<DType>(tag);
        const std::uint32_t rank = r.u32();
        for (std::uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.u64());
        rec.offset = r.u64();
        rec.length = r.u64();
        records.push_back(std::move(rec));
    }

    const char* base = r.position();
    const std::size_t payload_size = r.remaining();
    TensorContainer c;
    std::uint64_t payload_end = 0;
    for (auto& rec : records) {
        if (rec.offset > payload_size || rec.length > payload_size - rec.offset) {
            throw FormatError("QLT1: record '" + rec.name + "' exceeds payload");
        }
        payload_end = std::max<std::uint64_t>(payload_end, rec.offset + rec.length);
        Reader pr(base + rec.offset, rec.length);
        const std::size_t n = element_count(rec.shape);
        if (rec.dtype == DType::NF4) {
            c.put(rec.name, decode_nf4(pr, std::move(rec.shape)));
        } else {
            const std::size_t width = rec.dtype == DType::F32 ? 4 : 8;
            if (rec.length != n * width) {
                throw FormatError("QLT1: record '" + rec.name + "' has wrong byte length");
            }
            DenseTensor t{std::move(rec.shape), std::vector<double>(n)};
            for (auto& v : t.values) v = rec.dtype == DType::F32 ? pr.f32() : pr.f64();
            c.put(rec.name, std::move(t), rec.dtype);
        }
        if (pr.remaining() != 0) throw FormatError("QLT1: trailing bytes in record '" + rec.name + "'");
    }
    if (payload_end != payload_size) throw FormatError("QLT1: payload has unreferenced trailing bytes");
    return c;
}

TensorContainer TensorContainer::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return read(in);
}

}  // namespace roqlora
