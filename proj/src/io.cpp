#include "featlift/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "featlift/error.hpp"

namespace featlift::io {

namespace {

static_assert(std::endian::native == std::endian::little, "featlift file formats assume a little-endian host");

std::string where(const std::filesystem::path& path) { return "'" + path.string() + "'"; }

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + where(path) + " for reading");
    return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open " + where(path) + " for writing");
    return out;
}

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::optional<PlyType> parse_ply_type(const std::string& t) {
    static const std::map<std::string, PlyType> types = {
        {"char", PlyType::I8},    {"int8", PlyType::I8},     {"uchar", PlyType::U8},   {"uint8", PlyType::U8},
        {"short", PlyType::I16},  {"int16", PlyType::I16},   {"ushort", PlyType::U16}, {"uint16", PlyType::U16},
        {"int", PlyType::I32},    {"int32", PlyType::I32},   {"uint", PlyType::U32},   {"uint32", PlyType::U32},
        {"float", PlyType::F32},  {"float32", PlyType::F32}, {"double", PlyType::F64}, {"float64", PlyType::F64}};
    const auto it = types.find(t);
    if (it == types.end()) return std::nullopt;
    return it->second;
}

std::size_t ply_type_size(PlyType t) {
    switch (t) {
        case PlyType::I8:
        case PlyType::U8: return 1;
        case PlyType::I16:
        case PlyType::U16: return 2;
        case PlyType::I32:
        case PlyType::U32:
        case PlyType::F32: return 4;
        case PlyType::F64: return 8;
    }
    return 0;
}

template <typename T>
T load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

double read_ply_value(const char* p, PlyType t) {
    switch (t) {
        case PlyType::I8: return load<std::int8_t>(p);
        case PlyType::U8: return load<std::uint8_t>(p);
        case PlyType::I16: return load<std::int16_t>(p);
        case PlyType::U16: return load<std::uint16_t>(p);
        case PlyType::I32: return load<std::int32_t>(p);
        case PlyType::U32: return load<std::uint32_t>(p);
        case PlyType::F32: return load<float>(p);
        case PlyType::F64: return load<double>(p);
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type;
    std::size_t offset;
};

int sh_degree_from_rest(std::size_t rest, const std::filesystem::path& path) {
    for (int deg = 0; deg <= kMaxShDegree; ++deg) {
        if (rest == std::size_t(3 * (sh_coeff_count(deg) - 1))) return deg;
    }
    throw InputError(where(path) + ": " + std::to_string(rest) + " f_rest_* fields do not match an SH degree 0-3");
}

}  // namespace

std::size_t ply_record_floats(int sh_degree, int feature_dim) {
    return 3 + 3 + 3 * std::size_t(sh_coeff_count(sh_degree) - 1) + 1 + 3 + 4 + std::size_t(feature_dim);
}

PlyLoad read_ply(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);

    std::string line;
    if (!std::getline(in, line) || line != "ply") throw InputError(where(path) + ": missing 'ply' magic");

    std::size_t vertex_count = 0;
    bool in_vertex = false, seen_vertex = false, format_ok = false;
    std::vector<PlyProperty> props;
    std::size_t stride = 0;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "end_header") {
            header_done = true;
            break;
        }
        if (key == "comment" || key == "obj_info" || key.empty()) continue;
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian") throw InputError(where(path) + ": only binary_little_endian PLY is supported");
            format_ok = true;
        } else if (key == "element") {
            std::string name;
            long long count = -1;
            ls >> name >> count;
            if (seen_vertex) throw InputError(where(path) + ": elements after 'vertex' are not supported");
            if (name != "vertex" || count < 0) throw InputError(where(path) + ": malformed element line '" + line + "'");
            vertex_count = std::size_t(count);
            in_vertex = seen_vertex = true;
        } else if (key == "property") {
            if (!in_vertex) throw InputError(where(path) + ": property outside of the vertex element");
            std::string type, name;
            ls >> type;
            if (type == "list") throw InputError(where(path) + ": list properties are not supported");
            ls >> name;
            const auto t = parse_ply_type(type);
            if (!t || name.empty()) throw InputError(where(path) + ": malformed property line '" + line + "'");
            props.push_back({name, *t, stride});
            stride += ply_type_size(*t);
        } else {
            throw InputError(where(path) + ": unexpected header line '" + line + "'");
        }
    }
    if (!header_done) throw InputError(where(path) + ": truncated header (no end_header)");
    if (!format_ok) throw InputError(where(path) + ": missing format line");
    if (!seen_vertex) throw InputError(where(path) + ": no vertex element");

    std::map<std::string, const PlyProperty*> by_name;
    for (const auto& p : props) by_name[p.name] = &p;
    auto require = [&](const std::string& name) -> const PlyProperty& {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw InputError(where(path) + ": missing required field '" + name + "'");
        return *it->second;
    };
    std::vector<const PlyProperty*> pos, dc, scale, rot, rest, sem;
    for (const char* n : {"x", "y", "z"}) pos.push_back(&require(n));
    for (int k = 0; k < 3; ++k) dc.push_back(&require("f_dc_" + std::to_string(k)));
    const PlyProperty& opacity = require("opacity");
    for (int k = 0; k < 3; ++k) scale.push_back(&require("scale_" + std::to_string(k)));
    for (int k = 0; k < 4; ++k) rot.push_back(&require("rot_" + std::to_string(k)));
    for (std::size_t k = 0; by_name.count("f_rest_" + std::to_string(k)); ++k) rest.push_back(by_name["f_rest_" + std::to_string(k)]);
    for (std::size_t k = 0; by_name.count("f_sem_" + std::to_string(k)); ++k) sem.push_back(by_name["f_sem_" + std::to_string(k)]);
    for (const auto& p : props) {
        const bool is_rest = p.name.rfind("f_rest_", 0) == 0;
        const bool is_sem = p.name.rfind("f_sem_", 0) == 0;
        if (!is_rest && !is_sem) continue;
        const std::string suffix = p.name.substr(is_rest ? 7 : 6);
        std::size_t k = 0;
        const auto res = std::from_chars(suffix.data(), suffix.data() + suffix.size(), k);
        if (res.ec != std::errc() || res.ptr != suffix.data() + suffix.size() || k >= (is_rest ? rest.size() : sem.size())) {
            throw InputError(where(path) + ": " + (is_rest ? "f_rest_*" : "f_sem_*") + " fields are not contiguous");
        }
    }
    const int degree = sh_degree_from_rest(rest.size(), path);
    const std::size_t rest_per_channel = rest.size() / 3;
    const int d = static_cast<int>(sem.size());

    const auto data_start = static_cast<std::uintmax_t>(in.tellg());
    const auto file_size = std::filesystem::file_size(path);
    if (stride == 0 || vertex_count > (file_size - std::min(file_size, data_start)) / stride) {
        throw InputError(where(path) + ": truncated vertex data (header declares " + std::to_string(vertex_count) +
                         " vertices of " + std::to_string(stride) + " bytes)");
    }
    std::vector<char> buffer(vertex_count * stride);
    in.read(buffer.data(), std::streamsize(buffer.size()));
    if (std::size_t(in.gcount()) != buffer.size()) {
        throw InputError(where(path) + ": truncated vertex data (expected " + std::to_string(buffer.size()) +
                         " bytes, got " + std::to_string(in.gcount()) + ")");
    }

    PlyLoad result;
    Scene& scene = result.scene;
    scene.sh_degree = degree;
    std::vector<std::vector<float>> features;
    for (std::size_t v = 0; v < vertex_count; ++v) {
        const char* row = buffer.data() + v * stride;
        auto get = [&](const PlyProperty* p) { return read_ply_value(row + p->offset, p->type); };
        Gaussian<float> g;
        bool finite = true;
        auto take = [&](const PlyProperty* p) {
            const double value = get(p);
            finite = finite && std::isfinite(value);
            return value;
        };
        for (int a = 0; a < 3; ++a) g.position(a) = float(take(pos[std::size_t(a)]));
        for (int c = 0; c < 3; ++c) g.sh(0, c) = float(take(dc[std::size_t(c)]));
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t k = 0; k < rest_per_channel; ++k) {
                g.sh(Eigen::Index(1 + k), Eigen::Index(c)) = float(take(rest[c * rest_per_channel + k]));
            }
        }
        g.opacity = float(opacity_from_logit(take(&opacity)));
        for (int a = 0; a < 3; ++a) g.scale(a) = float(std::exp(take(scale[std::size_t(a)])));
        Eigen::Quaterniond q(take(rot[0]), take(rot[1]), take(rot[2]), take(rot[3]));
        std::vector<float> f(static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k) f[std::size_t(k)] = float(take(sem[std::size_t(k)]));

        if (!finite || !(q.norm() > 0) || !g.scale.allFinite() || !(g.scale.array() > 0.0f).all()) {
            ++result.rejected_rows;
            continue;
        }
        // keep opacity strictly inside (0, 1) after float rounding
        g.opacity = std::clamp(g.opacity, std::nextafter(0.0f, 1.0f), std::nextafter(1.0f, 0.0f));
        g.rotation = q.normalized().cast<float>();
        scene.gaussians.push_back(g);
        features.push_back(std::move(f));
    }
    if (result.rejected_rows > 0) {
        std::cerr << "warning: " << where(path) << ": rejected " << result.rejected_rows
                  << " rows with non-finite parameters or zero rotation\n";
    }
    if (d > 0) {
        scene.features.resize(Eigen::Index(features.size()), d);
        for (std::size_t i = 0; i < features.size(); ++i) {
            for (int k = 0; k < d; ++k) scene.features(Eigen::Index(i), k) = features[i][std::size_t(k)];
        }
    }
    return result;
}

void write_ply(const Scene& scene, const std::filesystem::path& path) {
    validate(scene);
    const int degree = scene.sh_degree;
    const std::size_t rest_per_channel = std::size_t(sh_coeff_count(degree) - 1);
    const int d = scene.feature_dim();

    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << "\n";
    for (const char* n : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"}) header << "property float " << n << "\n";
    for (std::size_t k = 0; k < 3 * rest_per_channel; ++k) header << "property float f_rest_" << k << "\n";
    header << "property float opacity\n";
    for (int k = 0; k < 3; ++k) header << "property float scale_" << k << "\n";
    for (int k = 0; k < 4; ++k) header << "property float rot_" << k << "\n";
    for (int k = 0; k < d; ++k) header << "property float f_sem_" << k << "\n";
    header << "end_header\n";

    const std::size_t floats = ply_record_floats(degree, d);
    std::vector<float> row(floats);
    std::ofstream out = open_out(path);
    const std::string h = header.str();
    out.write(h.data(), std::streamsize(h.size()));
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const auto& g = scene.gaussians[i];
        std::size_t k = 0;
        for (int a = 0; a < 3; ++a) row[k++] = g.position(a);
        for (int c = 0; c < 3; ++c) row[k++] = g.sh(0, c);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t j = 0; j < rest_per_channel; ++j) row[k++] = g.sh(Eigen::Index(1 + j), Eigen::Index(c));
        }
        row[k++] = float(logit_from_opacity(double(g.opacity)));
        for (int a = 0; a < 3; ++a) row[k++] = float(std::log(double(g.scale(a))));
        const Eigen::Quaternionf q = g.rotation.normalized();
        row[k++] = q.w();
        row[k++] = q.x();
        row[k++] = q.y();
        row[k++] = q.z();
        for (int j = 0; j < d; ++j) row[k++] = scene.features(Eigen::Index(i), j);
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(floats * sizeof(float)));
    }
    if (!out) throw InputError("failed writing " + where(path));
}

Map read_feature_map(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    char header[kFeatureMapHeaderBytes];
    in.read(header, sizeof(header));
    if (std::size_t(in.gcount()) != sizeof(header)) throw InputError(where(path) + ": truncated feature-map header");
    if (std::memcmp(header, kFeatureMapMagic, 8) != 0) throw InputError(where(path) + ": bad feature-map magic");
    const auto version = load<std::uint32_t>(header + 8);
    const auto height = load<std::uint32_t>(header + 12);
    const auto width = load<std::uint32_t>(header + 16);
    const auto dim = load<std::uint32_t>(header + 20);
    const auto dtype = load<std::uint32_t>(header + 24);
    if (version != kFeatureMapVersion) throw InputError(where(path) + ": unsupported feature-map version " + std::to_string(version));
    if (dtype != kDtypeF32) throw InputError(where(path) + ": unsupported dtype tag " + std::to_string(dtype));

    const std::uint64_t count = std::uint64_t(height) * width * dim;
    const auto file_size = std::filesystem::file_size(path);
    if (file_size != kFeatureMapHeaderBytes + count * 4) {
        throw InputError(where(path) + ": payload is " + std::to_string(file_size - kFeatureMapHeaderBytes) +
                         " bytes, expected " + std::to_string(count * 4));
    }
    Map map{int(height), int(width), int(dim)};
    in.read(reinterpret_cast<char*>(map.data.data()), std::streamsize(count * 4));
    if (std::uint64_t(in.gcount()) != count * 4) throw InputError(where(path) + ": truncated feature-map payload");
    return map;
}

void write_feature_map(const Map& map, const std::filesystem::path& path) {
    if (map.data.rows() != map.pixel_count()) throw ConsistencyError("feature map shape does not match its data");
    std::ofstream out = open_out(path);
    char header[kFeatureMapHeaderBytes];
    std::memcpy(header, kFeatureMapMagic, 8);
    const std::uint32_t fields[5] = {kFeatureMapVersion, std::uint32_t(map.height), std::uint32_t(map.width),
                                     std::uint32_t(map.dim()), kDtypeF32};
    std::memcpy(header + 8, fields, sizeof(fields));
    out.write(header, sizeof(header));
    out.write(reinterpret_cast<const char*>(map.data.data()), std::streamsize(map.data.size() * sizeof(float)));
    if (!out) throw InputError("failed writing " + where(path));
}

std::vector<Camera> read_cameras(const std::filesystem::path& path, double orthonormal_tol) {
    std::ifstream in = open_in(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(where(path) + ": invalid JSON: " + e.what());
    }
    const nlohmann::json& records = doc.is_array() ? doc : doc.value("cameras", nlohmann::json());
    if (!records.is_array()) throw InputError(where(path) + ": expected a 'cameras' array");

    std::vector<Camera> cams;
    for (const auto& r : records) {
        Camera c;
        try {
            c.id = r.at("id").get<std::string>();
            c.width = r.at("width").get<int>();
            c.height = r.at("height").get<int>();
            c.fx = r.at("fx").get<float>();
            c.fy = r.at("fy").get<float>();
            c.cx = r.at("cx").get<float>();
            c.cy = r.at("cy").get<float>();
            const auto& rot = r.at("rotation");
            const auto& t = r.at("translation");
            if (rot.size() != 3 || t.size() != 3) throw InputError("rotation must be 3x3 and translation length 3");
            for (int i = 0; i < 3; ++i) {
                if (rot.at(std::size_t(i)).size() != 3) throw InputError("rotation must be 3x3");
                for (int j = 0; j < 3; ++j) c.rotation(i, j) = rot.at(std::size_t(i)).at(std::size_t(j)).get<float>();
                c.translation(i) = t.at(std::size_t(i)).get<float>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw InputError(where(path) + ": malformed camera record: " + e.what());
        } catch (const InputError& e) {
            throw InputError(where(path) + ": " + e.what());
        }
        try {
            validate(c, orthonormal_tol);
        } catch (const InputError& e) {
            throw InputError(where(path) + ": " + e.what());
        }
        cams.push_back(std::move(c));
    }
    return cams;
}

void write_cameras(const std::vector<Camera>& cameras, const std::filesystem::path& path) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& c : cameras) {
        nlohmann::json rot = nlohmann::json::array();
        for (int i = 0; i < 3; ++i) rot.push_back({c.rotation(i, 0), c.rotation(i, 1), c.rotation(i, 2)});
        records.push_back({{"id", c.id},
                           {"width", c.width},
                           {"height", c.height},
                           {"fx", c.fx},
                           {"fy", c.fy},
                           {"cx", c.cx},
                           {"cy", c.cy},
                           {"rotation", rot},
                           {"translation", {c.translation(0), c.translation(1), c.translation(2)}}});
    }
    std::ofstream out = open_out(path);
    out << nlohmann::json{{"cameras", records}}.dump(2) << "\n";
    if (!out) throw InputError("failed writing " + where(path));
}

namespace {

std::uint8_t to_byte(float v) {
    if (!std::isfinite(v)) v = 0.0f;
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_png(const std::vector<std::uint8_t>& pixels, int width, int height, bool rgb, const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = png_uint_32(width);
    image.height = png_uint_32(height);
    image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw InputError("failed writing PNG " + where(path) + ": " + msg);
    }
}

}  // namespace

void write_png_gray(const ScalarImage<float>& image, const std::filesystem::path& path) {
    std::vector<std::uint8_t> px(std::size_t(image.size()));
    for (Eigen::Index i = 0; i < image.size(); ++i) px[std::size_t(i)] = to_byte(image.data()[i]);
    write_png(px, int(image.cols()), int(image.rows()), false, path);
}

void write_png_rgb(const Map& image, const std::filesystem::path& path) {
    if (image.dim() != 3) throw ConsistencyError("write_png_rgb needs a 3-channel map");
    std::vector<std::uint8_t> px(std::size_t(image.data.size()));
    for (Eigen::Index i = 0; i < image.data.size(); ++i) px[std::size_t(i)] = to_byte(image.data.data()[i]);
    write_png(px, image.width, image.height, true, path);
}

void write_mask_png(const Mask& mask, const std::filesystem::path& path) {
    std::vector<std::uint8_t> px(std::size_t(mask.size()));
    for (Eigen::Index i = 0; i < mask.size(); ++i) px[std::size_t(i)] = mask.data()[i] ? 255 : 0;
    write_png(px, int(mask.cols()), int(mask.rows()), false, path);
}

Mask read_mask_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw InputError("cannot read PNG " + where(path) + ": " + image.message);
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw InputError("cannot decode PNG " + where(path) + ": " + msg);
    }
    Mask mask(Eigen::Index(image.height), Eigen::Index(image.width));
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = px[std::size_t(i)] > 127;
    return mask;
}

VecX<float> read_embedding(const std::filesystem::path& path) {
    std::ifstream in = open_in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    std::replace(text.begin(), text.end(), ',', ' ');
    std::istringstream ss(text);
    std::vector<float> values;
    std::string tok;
    while (ss >> tok) {
        float v = 0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
            throw InputError(where(path) + ": not a number: '" + tok + "'");
        }
        values.push_back(v);
    }
    if (values.empty()) throw InputError(where(path) + ": empty embedding");
    return Eigen::Map<VecX<float>>(values.data(), Eigen::Index(values.size()));
}

void write_embedding(const VecX<float>& v, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    out.precision(9);
    for (Eigen::Index i = 0; i < v.size(); ++i) out << v(i) << (i + 1 < v.size() ? " " : "\n");
    if (!out) throw InputError("failed writing " + where(path));
}

}  // namespace featlift::io
