#pragma once

// "DARC" checkpoint container: magic, format version, record count, then
// (name, dtype tag, rank, dims, little-endian payload) records. Round trips
// are bitwise lossless; unknown dtype tags are rejected on load.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dar/tensor.hpp"

namespace dar {

enum class DType : uint8_t { f32 = 0, f64 = 1, i64 = 2 };

struct CheckpointRecord {
    DType dtype;
    std::vector<int64_t> dims;
    std::vector<uint8_t> payload;

    Tensor<float> as_f32() const;
    Tensor<double> as_f64() const;
    std::vector<int64_t> as_i64() const;
};

class CheckpointWriter {
public:
    void add_f32(const std::string& name, const Tensor<float>& t);
    void add_f64(const std::string& name, const Tensor<double>& t);
    void add_i64(const std::string& name, const std::vector<int64_t>& v,
                 const std::vector<int64_t>& dims = {});
    void add_scalar_i64(const std::string& name, int64_t v) { add_i64(name, {v}, {1}); }

    // write-temp-then-rename
    void save(const std::string& path) const;

private:
    std::vector<std::pair<std::string, CheckpointRecord>> records_;
};

class CheckpointReader {
public:
    explicit CheckpointReader(const std::string& path);

    bool has(const std::string& name) const { return records_.count(name) > 0; }
    const CheckpointRecord& get(const std::string& name) const;
    int64_t scalar_i64(const std::string& name) const;
    const std::map<std::string, CheckpointRecord>& all() const { return records_; }

private:
    std::map<std::string, CheckpointRecord> records_;
};

}  // namespace dar
