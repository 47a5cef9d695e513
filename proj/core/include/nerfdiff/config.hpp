// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/diffusion.hpp"
#include "nerfdiff/error.hpp"
#include "nerfdiff/field.hpp"
#include "nerfdiff/ngd.hpp"
#include "nerfdiff/optimize.hpp"
#include "nerfdiff/renderer.hpp"
#include "nerfdiff/scenes.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <initializer_list>
#include <string>

namespace nerfdiff {

/**
 * JSON run configuration. Sections are objects ("fit", "ngd", ...); values
 * are addressed with dotted keys such as "ngd.gamma_mode".
 */
class RunConfig {
public:
    RunConfig() : root_(nlohmann::json::object()) {}
    explicit RunConfig(nlohmann::json root);

    /// Throws Error when the file is missing or not a JSON object.
    static RunConfig load(const std::filesystem::path& path);

    /// Applies "a.b=value". The value is parsed as JSON when possible
    /// (numbers, booleans, arrays) and taken as a string otherwise.
    void set(const std::string& assignment);

    bool has(const std::string& key) const;
    const nlohmann::json* find(const std::string& key) const;

    template <typename T>
    T get(const std::string& key, const T& fallback) const {
        const auto* node = find(key);
        if (!node) return fallback;
        try {
            return node->get<T>();
        } catch (const nlohmann::json::exception&) {
            throw Error("config: wrong type for key '" + key + "'");
        }
    }

    /// Throws Error if `section` holds a key outside `known`.
    void require_keys(const std::string& section, std::initializer_list<const char*> known) const;

    const nlohmann::json& json() const { return root_; }
    std::string dump() const { return root_.dump(2); }

private:
    nlohmann::json root_;
};

FieldConfig read_field_config(const RunConfig& cfg, const std::string& section = "field");
/// coarse_samples, fine_samples, jitter, background [r, g, b], chunk_rays.
RenderConfig read_render_config(const RunConfig& cfg, const std::string& section, RenderConfig fallback = {});
FitConfig read_fit_config(const RunConfig& cfg, const std::string& section = "fit");
GuidanceConfig read_guidance_config(const RunConfig& cfg, const std::string& section = "ngd");
SdsConfig read_sds_config(const RunConfig& cfg, const std::string& section = "sds");
DenoiserConfig read_denoiser_config(const RunConfig& cfg, const std::string& section = "denoiser");
DenoiserTrainConfig read_denoiser_train_config(const RunConfig& cfg, const std::string& section = "denoiser");
DatasetConfig read_dataset_config(const RunConfig& cfg, const std::string& section = "data");

} // namespace nerfdiff
