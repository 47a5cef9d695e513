// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/field.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nerfdiff {

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

/**
 * Little-endian tensor archive: magic "NFD1", u32 version, u32 tensor count,
 * then per tensor u32 name length, UTF-8 name, u32 rank, u32 dims[rank] and
 * the float32 payload.
 */
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Throws Error when `name` is missing.
const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

/// Doubles stored losslessly as three float32 terms (hi, mid, lo).
std::vector<float> split_doubles(const std::vector<double>& values);
std::vector<double> join_doubles(const std::vector<float>& parts);

/// Parameter tensors plus "config.field" and "config.reference".
std::vector<NamedTensor> field_tensors(const FieldParams<float>& params);
FieldParams<float> field_from_tensors(const std::vector<NamedTensor>& tensors);

void save_field(const std::filesystem::path& path, const FieldParams<float>& params);
FieldParams<float> load_field(const std::filesystem::path& path);

} // namespace nerfdiff
