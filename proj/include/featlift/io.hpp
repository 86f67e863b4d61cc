#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "featlift/feature_map.hpp"
#include "featlift/scene.hpp"

namespace featlift::io {

using Scene = GaussianScene<float>;
using Camera = CameraView<float>;
using Map = FeatureMap<float>;

struct PlyLoad {
    Scene scene;
    std::size_t rejected_rows = 0;  // rows dropped for NaN/inf or a zero quaternion
};

/// Binary little-endian 3DGS checkpoint. Opacity is stored as a logit, scale
/// as log, color as f_dc_* / f_rest_*; semantic features as f_sem_0..f_sem_{d-1}.
PlyLoad read_ply(const std::filesystem::path& path);
void write_ply(const Scene& scene, const std::filesystem::path& path);

/// Floats per vertex written by write_ply; the file is the header plus N times this many floats.
std::size_t ply_record_floats(int sh_degree, int feature_dim);

inline constexpr char kFeatureMapMagic[8] = {'O', 'L', 'G', 'S', 'F', 'M', 'A', 'P'};
inline constexpr std::uint32_t kFeatureMapVersion = 1;
inline constexpr std::uint32_t kDtypeF32 = 1;
inline constexpr std::size_t kFeatureMapHeaderBytes = 8 + 5 * 4;

/// Layout: magic "OLGSFMAP", then u32 version, height, width, dim, dtype tag,
/// all little-endian, followed by H*W*d float32 values in row-major order.
Map read_feature_map(const std::filesystem::path& path);
void write_feature_map(const Map& map, const std::filesystem::path& path);

/// JSON document: {"cameras": [{"id", "width", "height", "fx", "fy", "cx",
/// "cy", "rotation": 3x3 row-major world-to-camera, "translation": [3]}]}.
/// A bare top-level array of records is accepted as well.
std::vector<Camera> read_cameras(const std::filesystem::path& path, double orthonormal_tol = 1e-3);
void write_cameras(const std::vector<Camera>& cameras, const std::filesystem::path& path);

/// 8-bit PNG output; values are clamped to [0, 1] and scaled by 255.
void write_png_gray(const ScalarImage<float>& image, const std::filesystem::path& path);
void write_png_rgb(const Map& image, const std::filesystem::path& path);
void write_mask_png(const Mask& mask, const std::filesystem::path& path);
/// Any pixel above 127 (after conversion to 8-bit gray) is foreground.
Mask read_mask_png(const std::filesystem::path& path);

/// Whitespace or comma separated floats.
VecX<float> read_embedding(const std::filesystem::path& path);
void write_embedding(const VecX<float>& v, const std::filesystem::path& path);

}  // namespace featlift::io
