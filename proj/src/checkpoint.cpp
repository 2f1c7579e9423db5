#include "dar/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace dar {

static_assert(std::endian::native == std::endian::little, "payloads are written little-endian");

namespace {

constexpr char kMagic[4] = {'D', 'A', 'R', 'C'};
constexpr uint32_t kVersion = 1;

size_t dtype_size(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::i64: return 8;
    }
    throw std::runtime_error("checkpoint: unknown dtype tag");
}

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    check_runtime(in.good(), "checkpoint: truncated file");
    return v;
}

}  // namespace

Tensor<float> CheckpointRecord::as_f32() const {
    check_runtime(dtype == DType::f32, "checkpoint: record is not f32");
    Tensor<float> t(dims);
    std::memcpy(t.ptr(), payload.data(), payload.size());
    return t;
}

Tensor<double> CheckpointRecord::as_f64() const {
    check_runtime(dtype == DType::f64, "checkpoint: record is not f64");
    Tensor<double> t(dims);
    std::memcpy(t.ptr(), payload.data(), payload.size());
    return t;
}

std::vector<int64_t> CheckpointRecord::as_i64() const {
    check_runtime(dtype == DType::i64, "checkpoint: record is not i64");
    std::vector<int64_t> v(payload.size() / 8);
    std::memcpy(v.data(), payload.data(), payload.size());
    return v;
}

void CheckpointWriter::add_f32(const std::string& name, const Tensor<float>& t) {
    CheckpointRecord r;
    r.dtype = DType::f32;
    r.dims = t.shape;
    r.payload.resize(t.data.size() * 4);
    std::memcpy(r.payload.data(), t.ptr(), r.payload.size());
    records_.emplace_back(name, std::move(r));
}

void CheckpointWriter::add_f64(const std::string& name, const Tensor<double>& t) {
    CheckpointRecord r;
    r.dtype = DType::f64;
    r.dims = t.shape;
    r.payload.resize(t.data.size() * 8);
    std::memcpy(r.payload.data(), t.ptr(), r.payload.size());
    records_.emplace_back(name, std::move(r));
}

void CheckpointWriter::add_i64(const std::string& name, const std::vector<int64_t>& v,
                               const std::vector<int64_t>& dims) {
    CheckpointRecord r;
    r.dtype = DType::i64;
    r.dims = dims.empty() ? std::vector<int64_t>{static_cast<int64_t>(v.size())} : dims;
    check_arg(Tensor<float>::numel_of(r.dims) == static_cast<int64_t>(v.size()), "add_i64: dims mismatch");
    r.payload.resize(v.size() * 8);
    std::memcpy(r.payload.data(), v.data(), r.payload.size());
    records_.emplace_back(name, std::move(r));
}

void CheckpointWriter::save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        check_runtime(out.good(), "checkpoint: cannot open " + tmp);
        out.write(kMagic, 4);
        write_pod(out, kVersion);
        write_pod(out, static_cast<uint64_t>(records_.size()));
        for (const auto& [name, rec] : records_) {
            write_pod(out, static_cast<uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_pod(out, static_cast<uint8_t>(rec.dtype));
            write_pod(out, static_cast<uint8_t>(rec.dims.size()));
            for (int64_t d : rec.dims) write_pod(out, static_cast<uint64_t>(d));
            out.write(reinterpret_cast<const char*>(rec.payload.data()),
                      static_cast<std::streamsize>(rec.payload.size()));
        }
        check_runtime(out.good(), "checkpoint: write failed for " + tmp);
    }
    check_runtime(std::rename(tmp.c_str(), path.c_str()) == 0, "checkpoint: rename failed for " + path);
}

CheckpointReader::CheckpointReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_runtime(in.good(), "checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    check_runtime(in.good() && std::memcmp(magic, kMagic, 4) == 0, "checkpoint: bad magic in " + path);
    const uint32_t version = read_pod<uint32_t>(in);
    check_runtime(version == kVersion, "checkpoint: unsupported version");
    const uint64_t count = read_pod<uint64_t>(in);
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_pod<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint8_t dtype_tag = read_pod<uint8_t>(in);
        check_runtime(dtype_tag <= static_cast<uint8_t>(DType::i64),
                      "checkpoint: unknown dtype tag " + std::to_string(dtype_tag));
        CheckpointRecord rec;
        rec.dtype = static_cast<DType>(dtype_tag);
        const uint8_t rank = read_pod<uint8_t>(in);
        int64_t numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            const int64_t dim = static_cast<int64_t>(read_pod<uint64_t>(in));
            rec.dims.push_back(dim);
            numel *= dim;
        }
        rec.payload.resize(static_cast<size_t>(numel) * dtype_size(rec.dtype));
        in.read(reinterpret_cast<char*>(rec.payload.data()), static_cast<std::streamsize>(rec.payload.size()));
        check_runtime(in.good(), "checkpoint: truncated record " + name);
        records_.emplace(std::move(name), std::move(rec));
    }
}

const CheckpointRecord& CheckpointReader::get(const std::string& name) const {
    auto it = records_.find(name);
    check_runtime(it != records_.end(), "checkpoint: missing record " + name);
    return it->second;
}

int64_t CheckpointReader::scalar_i64(const std::string& name) const {
    auto v = get(name).as_i64();
    check_runtime(v.size() == 1, "checkpoint: not a scalar: " + name);
    return v[0];
}

}  // namespace dar
