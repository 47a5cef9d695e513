// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numbers>

using namespace nerfdiff;

TEST(RunConfig, SetParsesJsonAndFallsBackToString) {
    RunConfig cfg;
    cfg.set("fit.steps=12");
    cfg.set("fit.render.jitter=false");
    cfg.set("ngd.gamma_mode=constant");
    cfg.set("fit.render.background=[0.5,0.25,1]");
    EXPECT_EQ(cfg.get<int>("fit.steps", 0), 12);
    EXPECT_FALSE(cfg.get<bool>("fit.render.jitter", true));
    EXPECT_EQ(cfg.get<std::string>("ngd.gamma_mode", ""), "constant");
    EXPECT_TRUE(cfg.has("fit.render"));
    EXPECT_FALSE(cfg.has("fit.missing"));
    EXPECT_EQ(cfg.get<int>("fit.missing", 7), 7);
    cfg.set("fit.steps=3");
    EXPECT_EQ(cfg.get<int>("fit.steps", 0), 3);
}

TEST(RunConfig, RejectsMalformedInput) {
    RunConfig cfg;
    EXPECT_THROW(cfg.set("noequals"), Error);
    EXPECT_THROW(cfg.set("=3"), Error);
    EXPECT_THROW(cfg.set("a..b=3"), Error);
    cfg.set("a=3");
    EXPECT_THROW(cfg.set("a.b=3"), Error);
    cfg.set("fit.steps=\"many\"");
    EXPECT_THROW(cfg.get<int>("fit.steps", 0), Error);
    EXPECT_THROW(RunConfig(nlohmann::json::array()), Error);
}

TEST(RunConfig, LoadFromFile) {
    const auto dir = std::filesystem::temp_directory_path();
    const auto good = dir / "nerfdiff_cfg_good.json";
    const auto bad = dir / "nerfdiff_cfg_bad.json";
    std::ofstream(good) << R"({"fit": {"steps": 5, "render": {"coarse_samples": 4}}})";
    std::ofstream(bad) << "{ not json";
    const auto cfg = RunConfig::load(good);
    EXPECT_EQ(read_fit_config(cfg).steps, 5);
    EXPECT_EQ(read_fit_config(cfg).render.coarse_samples, 4);
    EXPECT_THROW(RunConfig::load(bad), Error);
    EXPECT_THROW(RunConfig::load(dir / "nerfdiff_cfg_missing.json"), Error);
}

TEST(RunConfig, UnknownKeysAreRejected) {
    RunConfig cfg;
    cfg.set("fit.stpes=5");
    EXPECT_THROW(read_fit_config(cfg), Error);
    RunConfig other;
    other.set("ngd.guidance_render.samples=3");
    EXPECT_THROW(read_guidance_config(other), Error);
}

TEST(RunConfig, DefaultsMatchStructDefaults) {
    const RunConfig cfg;
    const FitConfig fit = read_fit_config(cfg);
    EXPECT_EQ(fit.steps, FitConfig{}.steps);
    EXPECT_EQ(fit.render.coarse_samples, FitConfig{}.render.coarse_samples);
    const GuidanceConfig g = read_guidance_config(cfg);
    EXPECT_EQ(g.gamma_mode, GammaMode::snr);
    EXPECT_EQ(g.target, TargetMode::unguided);
    EXPECT_EQ(g.ddim_steps, GuidanceConfig{}.ddim_steps);
    EXPECT_EQ(read_field_config(cfg).conditioning, Conditioning::triplane);
    EXPECT_EQ(read_dataset_config(cfg).rig.rig, CameraRig::circle);
}

TEST(RunConfig, SectionsReadOverrides) {
    RunConfig cfg;
    cfg.set("field.conditioning=pixel_aligned");
    cfg.set("field.resolution=24");
    cfg.set("ngd.gamma_mode=constant");
    cfg.set("ngd.gamma=0.25");
    cfg.set("ngd.target=guided");
    cfg.set("ngd.train_render.fine_samples=0");
    cfg.set("sds.t_min=0.1");
    cfg.set("denoiser.conditional=false");
    cfg.set("denoiser.steps=17");
    cfg.set("data.rig=spiral");
    cfg.set("data.fov_deg=90");
    cfg.set("data.elevation_deg=30");
    const FieldConfig f = read_field_config(cfg);
    EXPECT_EQ(f.conditioning, Conditioning::pixel_aligned);
    EXPECT_EQ(f.resolution, 24);
    const GuidanceConfig g = read_guidance_config(cfg);
    EXPECT_EQ(g.gamma_mode, GammaMode::constant);
    EXPECT_EQ(g.gamma, 0.25);
    EXPECT_EQ(g.target, TargetMode::guided);
    EXPECT_EQ(g.train_render.fine_samples, 0);
    EXPECT_EQ(read_sds_config(cfg).t_min, 0.1);
    EXPECT_FALSE(read_denoiser_config(cfg).conditional);
    EXPECT_EQ(read_denoiser_train_config(cfg).steps, 17);
    const DatasetConfig d = read_dataset_config(cfg);
    EXPECT_EQ(d.rig.rig, CameraRig::spiral);
    EXPECT_NEAR(d.rig.fov_x, std::numbers::pi / 2, 1e-15);
    EXPECT_NEAR(d.rig.elevation, std::numbers::pi / 6, 1e-15);
}

TEST(RunConfig, InvalidEnumsAndRangesThrow) {
    for (const char* bad : {"field.conditioning=voxels", "ngd.gamma_mode=linear", "ngd.target=both", "data.rig=line",
                            "fit.batch_rays=0", "fit.render.background=[1,2]", "ngd.gamma=-1"}) {
        RunConfig cfg;
        cfg.set(bad);
        EXPECT_ANY_THROW({
            read_field_config(cfg);
            read_guidance_config(cfg);
            read_dataset_config(cfg);
            read_fit_config(cfg);
        }) << bad;
    }
}
