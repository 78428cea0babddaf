#include "litevla/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace litevla {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(std::span<const std::uint8_t> b) { buf.insert(buf.end(), b.begin(), b.end()); }
    void str(const std::string& s) { buf.insert(buf.end(), s.begin(), s.end()); }

    std::vector<std::uint8_t> buf;

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::uint8_t u8() { return need(1)[0]; }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n) { return need(n); }
    std::string str(std::size_t n) {
        auto s = need(n);
        return std::string(s.begin(), s.end());
    }
    std::size_t pos() const { return pos_; }
    void seek(std::size_t p) {
        if (p > b_.size()) throw CheckpointError("checkpoint offset beyond end of file");
        pos_ = p;
    }

private:
    std::span<const std::uint8_t> need(std::size_t n) {
        if (pos_ + n > b_.size()) throw CheckpointError("checkpoint truncated");
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint64_t le(int n) {
        auto s = need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
        return v;
    }

    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

std::uint64_t payload_bytes(const StoredTensor& t) {
    if (const auto* f = std::get_if<Tensor>(&t)) return 4ull * f->numel();
    const auto& q = std::get<NF4QuantizedTensor>(t);
    return nf4_payload_bytes(q.numel(), q.block_size(), q.double_quantized());
}

void write_payload(Writer& w, const StoredTensor& t) {
    if (const auto* f = std::get_if<Tensor>(&t)) {
        for (float v : f->values()) w.f32(v);
        return;
    }
    const auto& q = std::get<NF4QuantizedTensor>(t);
    w.bytes(q.packed_codes());
    if (const auto& dq = q.double_quant()) {
        w.bytes(dq->codes);
        for (float s : dq->group_step) w.f32(s);
        for (float o : dq->group_offset) w.f32(o);
    } else {
        for (float s : q.scales()) w.f32(s);
    }
}

}  // namespace

const char* dtype_name(DType d) {
    switch (d) {
        case DType::FP32: return "fp32";
        case DType::NF4: return "nf4";
        case DType::NF4DQ: return "nf4+dq";
    }
    return "unknown";
}

DType dtype_of(const StoredTensor& t) {
    if (std::holds_alternative<Tensor>(t)) return DType::FP32;
    return std::get<NF4QuantizedTensor>(t).double_quantized() ? DType::NF4DQ : DType::NF4;
}

void Checkpoint::put(std::string name, StoredTensor value) {
    if (name.empty() || name.size() > 0xFFFF) throw CheckpointError("invalid tensor name length");
    for (auto& [n, v] : tensors_) {
        if (n == name) {
            v = std::move(value);
            return;
        }
    }
    tensors_.emplace_back(std::move(name), std::move(value));
}

bool Checkpoint::contains(const std::string& name) const {
    for (const auto& [n, v] : tensors_) {
        if (n == name) return true;
    }
    return false;
}

const StoredTensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, v] : tensors_) {
        if (n == name) return v;
    }
    throw CheckpointError("checkpoint has no tensor named '" + name + "'");
}

const Tensor& Checkpoint::get_fp32(const std::string& name) const {
    const auto& v = get(name);
    if (const auto* t = std::get_if<Tensor>(&v)) return *t;
    throw CheckpointError("tensor '" + name + "' is not fp32");
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.str("LVLA");
    w.u32(kCheckpointVersion);
    const std::string meta = ckpt.metadata.dump();
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.str(meta);
    w.u32(static_cast<std::uint32_t>(ckpt.tensors().size()));

    std::uint64_t table_bytes = 0;
    for (const auto& [name, t] : ckpt.tensors()) {
        const auto rank = std::visit([](const auto& v) { return v.shape().size(); }, t);
        table_bytes += 2 + name.size() + 1 + 1 + 8 * rank + 4 + 8 + 8;
    }
    std::uint64_t offset = w.buf.size() + table_bytes;
    for (const auto& [name, t] : ckpt.tensors()) {
        const Shape& shape = std::visit([](const auto& v) -> const Shape& { return v.shape(); }, t);
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.str(name);
        w.u8(static_cast<std::uint8_t>(dtype_of(t)));
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) w.u64(d);
        const auto* q = std::get_if<NF4QuantizedTensor>(&t);
        w.u32(q ? static_cast<std::uint32_t>(q->block_size()) : 0u);
        const std::uint64_t nbytes = payload_bytes(t);
        w.u64(offset);
        w.u64(nbytes);
        offset += nbytes;
    }
    for (const auto& [name, t] : ckpt.tensors()) write_payload(w, t);
    return std::move(w.buf);
}

namespace {

std::vector<TableEntry> read_table(Reader& r, nlohmann::json* meta_out) {
    if (r.str(4) != "LVLA") throw CheckpointError("bad checkpoint magic");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto meta_len = r.u32();
    const std::string meta = r.str(meta_len);
    if (meta_out) {
        try {
            *meta_out = nlohmann::json::parse(meta);
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
        }
    }
    const auto count = r.u32();
    std::vector<TableEntry> table;
    for (std::uint32_t i = 0; i < count; ++i) {
        TableEntry e;
        e.name = r.str(r.u16());
        const auto dt = r.u8();
        if (dt > 2) throw CheckpointError("unknown dtype " + std::to_string(dt) + " for '" + e.name + "'");
        e.dtype = static_cast<DType>(dt);
        const auto ndim = r.u8();
        for (std::uint8_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<std::size_t>(r.u64()));
        e.block_size = r.u32();
        e.offset = r.u64();
        e.nbytes = r.u64();
        table.push_back(std::move(e));
    }
    return table;
}

}  // namespace

std::vector<TableEntry> read_tensor_table(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    return read_table(r, nullptr);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    Checkpoint ckpt;
    const auto table = read_table(r, &ckpt.metadata);
    std::uint64_t cursor = r.pos();
    for (const auto& e : table) {
        const std::size_t n = shape_numel(e.shape);
        const bool dq = e.dtype == DType::NF4DQ;
        const std::uint64_t expected =
            e.dtype == DType::FP32 ? 4ull * n : (e.block_size < 2 ? 0 : nf4_payload_bytes(n, e.block_size, dq));
        if (e.nbytes != expected || (e.dtype != DType::FP32 && e.block_size < 2)) {
            throw CheckpointError("payload size of '" + e.name + "' disagrees with its shape");
        }
        if (e.offset != cursor) throw CheckpointError("payload of '" + e.name + "' is not contiguous");
        cursor += e.nbytes;
        r.seek(static_cast<std::size_t>(e.offset));
        if (e.dtype == DType::FP32) {
            std::vector<float> v(n);
            for (auto& x : v) x = r.f32();
            try {
                ckpt.put(e.name, Tensor(e.shape, std::move(v)));
            } catch (const InvariantError& err) {
                throw CheckpointError("tensor '" + e.name + "': " + err.what());
            }
            continue;
        }
        const std::size_t blocks = (n + e.block_size - 1) / e.block_size;
        auto codes = r.take((n + 1) / 2);
        std::vector<std::uint8_t> packed(codes.begin(), codes.end());
        std::vector<float> scales;
        std::optional<DoubleQuantScales> dqs;
        if (dq) {
            const std::size_t groups = (blocks + kScaleGroupBlocks - 1) / kScaleGroupBlocks;
            DoubleQuantScales s;
            auto sc = r.take(blocks);
            s.codes.assign(sc.begin(), sc.end());
            s.group_step.resize(groups);
            s.group_offset.resize(groups);
            for (auto& x : s.group_step) x = r.f32();
            for (auto& x : s.group_offset) x = r.f32();
            dqs = std::move(s);
        } else {
            scales.resize(blocks);
            for (auto& x : scales) x = r.f32();
        }
        try {
            ckpt.put(e.name, NF4QuantizedTensor::from_parts(e.shape, e.block_size, std::move(packed),
                                                            std::move(scales), std::move(dqs)));
        } catch (const StructuralError& err) {
            throw CheckpointError("tensor '" + e.name + "': " + err.what());
        }
    }
    if (cursor != bytes.size()) throw CheckpointError("trailing bytes after the last payload");
    return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file_bytes(path)); }

}  // namespace litevla
