// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/io.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bevsplat {

namespace {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "' for reading");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

class ByteReader {
  public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string origin)
        : bytes_(bytes), origin_(std::move(origin)) {}

    template <typename T>
    T read() {
        T value;
        if (at_ + sizeof(T) > bytes_.size()) {
            throw TruncatedFile("'" + origin_ + "' ends mid-record");
        }
        std::memcpy(&value, bytes_.data() + at_, sizeof(T));
        at_ += sizeof(T);
        return value;
    }

    void read_bytes(void* dst, std::size_t n) {
        if (at_ + n > bytes_.size()) {
            throw TruncatedFile("'" + origin_ + "' ends mid-record");
        }
        std::memcpy(dst, bytes_.data() + at_, n);
        at_ += n;
    }

    std::size_t remaining() const { return bytes_.size() - at_; }

  private:
    std::span<const std::uint8_t> bytes_;
    std::string origin_;
    std::size_t at_ = 0;
};

template <typename T>
void append(std::vector<std::uint8_t>& out, const T& value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

void append_f32(std::vector<std::uint8_t>& out, double value) {
    append(out, static_cast<float>(value));
}

} // namespace

void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot open '" + tmp.string() + "' for writing");
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw Error("write to '" + tmp.string() + "' failed");
        }
    }
    std::filesystem::rename(tmp, path);
}

void atomic_write(const std::filesystem::path& path, const std::string& text) {
    atomic_write(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                     text.size()));
}

CalibFile load_calib(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open calibration file '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedHeader("calibration file '" + path.string() + "': " + e.what());
    }
    CalibFile out;
    try {
        out.f_ref = j.at("f_ref").get<double>();
        for (const auto& jc : j.at("cameras")) {
            CameraCalib c;
            c.name = jc.at("name").get<std::string>();
            c.fx = jc.at("fx").get<double>();
            c.fy = jc.at("fy").get<double>();
            c.cx = jc.at("cx").get<double>();
            c.cy = jc.at("cy").get<double>();
            const auto r = jc.at("R").get<std::vector<double>>();
            if (r.size() != 9) {
                throw ValidationFailed("camera '" + c.name + "': R must have 9 entries");
            }
            for (int i = 0; i < 3; ++i) {
                for (int k = 0; k < 3; ++k) {
                    c.R(i, k) = r[3 * i + k];
                }
            }
            const auto t = jc.at("t").get<std::vector<double>>();
            if (t.size() != 3) {
                throw ValidationFailed("camera '" + c.name + "': t must have 3 entries");
            }
            c.t = {t[0], t[1], t[2]};
            c.width = jc.at("width").get<int>();
            c.height = jc.at("height").get<int>();
            c.f_ref = out.f_ref;
            c.check(1e-6);
            // Snap onto SO(3) so downstream code sees the 1e-9 invariant.
            c.R = c.rotation_quat().to_matrix();
            out.cameras.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationFailed("calibration file '" + path.string() + "': " + e.what());
    }
    return out;
}

void save_calib(const std::filesystem::path& path, const CalibFile& calib) {
    nlohmann::json j;
    j["f_ref"] = calib.f_ref;
    j["cameras"] = nlohmann::json::array();
    for (const CameraCalib& c : calib.cameras) {
        nlohmann::json jc;
        jc["name"] = c.name;
        jc["fx"] = c.fx;
        jc["fy"] = c.fy;
        jc["cx"] = c.cx;
        jc["cy"] = c.cy;
        std::vector<double> r(9);
        for (int i = 0; i < 3; ++i) {
            for (int k = 0; k < 3; ++k) {
                r[3 * i + k] = c.R(i, k);
            }
        }
        jc["R"] = r;
        jc["t"] = std::vector<double>{c.t.x(), c.t.y(), c.t.z()};
        jc["width"] = c.width;
        jc["height"] = c.height;
        j["cameras"].push_back(jc);
    }
    atomic_write(path, j.dump(2) + "\n");
}

void save_scene(const std::filesystem::path& path, const GaussianScene& scene) {
    std::vector<std::uint8_t> out;
    const std::uint32_t count = static_cast<std::uint32_t>(scene.size());
    const std::uint32_t dim = static_cast<std::uint32_t>(scene.feature_dim());
    out.reserve(16 + static_cast<std::size_t>(count) * (11 + dim) * 4);
    out.insert(out.end(), {'G', 'S', 'B', 'V'});
    append(out, std::uint32_t{1});
    append(out, count);
    append(out, dim);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Vec3 c = scene.center(i);
        const Vec3 s = scene.scale(i);
        const Quat q = scene.rotation(i);
        append_f32(out, c.x());
        append_f32(out, c.y());
        append_f32(out, c.z());
        append_f32(out, s.x());
        append_f32(out, s.y());
        append_f32(out, s.z());
        append_f32(out, q.w);
        append_f32(out, q.x);
        append_f32(out, q.y);
        append_f32(out, q.z);
        append_f32(out, scene.opacity(i));
        for (double e : scene.embedding(i)) {
            append_f32(out, e);
        }
    }
    atomic_write(path, out);
}

GaussianScene load_scene(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_all(path);
    ByteReader reader(bytes, path.string());
    char magic[4];
    reader.read_bytes(magic, 4);
    if (std::memcmp(magic, "GSBV", 4) != 0) {
        throw BadMagic("'" + path.string() + "' is not a GSBV scene file");
    }
    const std::uint32_t version = reader.read<std::uint32_t>();
    if (version != 1) {
        throw VersionUnsupported("'" + path.string() + "': GSBV version " + std::to_string(version));
    }
    const std::uint32_t count = reader.read<std::uint32_t>();
    const std::uint32_t dim = reader.read<std::uint32_t>();

    GaussianScene scene(static_cast<int>(dim));
    scene.resize(count);
    std::vector<double> emb(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        float v[11];
        reader.read_bytes(v, sizeof(v));
        scene.set_center(i, Vec3{v[0], v[1], v[2]});
        scene.set_scale(i, Vec3{v[3], v[4], v[5]});
        scene.set_rotation(i, Quat{v[6], v[7], v[8], v[9]});
        scene.set_opacity(i, v[10]);
        for (std::uint32_t ch = 0; ch < dim; ++ch) {
            emb[ch] = reader.read<float>();
        }
        scene.set_embedding(i, emb);
    }
    if (reader.remaining() != 0) {
        throw TruncatedFile("'" + path.string() + "' has trailing bytes");
    }
    // f32 storage slack on the unit-quaternion and sigma_min invariants.
    const std::vector<Violation> violations = validate(scene, {.quat_tol = 1e-6, .scale_slack = 1e-9});
    if (!violations.empty()) {
        throw ValidationFailed("'" + path.string() + "': gaussian " + std::to_string(violations[0].index) +
                               " violates " + violations[0].field + " (" + violations[0].message + ")");
    }
    return scene;
}

namespace {

void append_pfm_plane(std::vector<std::uint8_t>& out, const BevGrid& grid, int channels_in_plane,
                      int first_channel) {
    std::string header = channels_in_plane == 3 ? "PF\n" : "Pf\n";
    header += std::to_string(grid.cols) + " " + std::to_string(grid.rows) + "\n-1.0\n";
    out.insert(out.end(), header.begin(), header.end());
    // PFM stores rows bottom-to-top: grid row 0 goes last.
    for (int r = grid.rows - 1; r >= 0; --r) {
        for (int c = 0; c < grid.cols; ++c) {
            for (int ch = 0; ch < channels_in_plane; ++ch) {
                append_f32(out, grid.at(r, c, first_channel + ch));
            }
        }
    }
}

struct PfmPlane {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    std::vector<float> data; // top-to-bottom after unflipping
};

std::string next_token(ByteReader& reader, const std::string& origin) {
    std::string tok;
    char c;
    do {
        reader.read_bytes(&c, 1);
    } while (c == ' ' || c == '\n' || c == '\r' || c == '\t');
    while (c != ' ' && c != '\n' && c != '\r' && c != '\t') {
        tok.push_back(c);
        reader.read_bytes(&c, 1);
    }
    if (tok.empty()) {
        throw MalformedHeader("'" + origin + "': empty header token");
    }
    return tok;
}

PfmPlane read_pfm_plane(ByteReader& reader, const std::string& origin) {
    const std::string magic = next_token(reader, origin);
    PfmPlane plane;
    if (magic == "PF") {
        plane.channels = 3;
    } else if (magic == "Pf") {
        plane.channels = 1;
    } else {
        throw MalformedHeader("'" + origin + "': expected Pf/PF, got '" + magic + "'");
    }
    try {
        plane.cols = std::stoi(next_token(reader, origin));
        plane.rows = std::stoi(next_token(reader, origin));
        const double scale = std::stod(next_token(reader, origin));
        if (scale >= 0.0) {
            throw MalformedHeader("'" + origin + "': big-endian PFM is not supported");
        }
    } catch (const std::invalid_argument&) {
        throw MalformedHeader("'" + origin + "': non-numeric PFM header field");
    }
    if (plane.rows <= 0 || plane.cols <= 0) {
        throw MalformedHeader("'" + origin + "': non-positive PFM dimensions");
    }
    const std::size_t n = static_cast<std::size_t>(plane.rows) * plane.cols * plane.channels;
    std::vector<float> bottom_up(n);
    reader.read_bytes(bottom_up.data(), n * sizeof(float));
    plane.data.resize(n);
    const std::size_t row_stride = static_cast<std::size_t>(plane.cols) * plane.channels;
    for (int r = 0; r < plane.rows; ++r) {
        std::memcpy(plane.data.data() + static_cast<std::size_t>(r) * row_stride,
                    bottom_up.data() + static_cast<std::size_t>(plane.rows - 1 - r) * row_stride,
                    row_stride * sizeof(float));
    }
    return plane;
}

} // namespace

void save_grid_pfm(const std::filesystem::path& path, const BevGrid& grid) {
    std::vector<std::uint8_t> out;
    if (grid.channels == 1 || grid.channels == 3) {
        append_pfm_plane(out, grid, grid.channels, 0);
    } else {
        const std::string header = "PFSTACK " + std::to_string(grid.channels) + "\n";
        out.insert(out.end(), header.begin(), header.end());
        for (int ch = 0; ch < grid.channels; ++ch) {
            append_pfm_plane(out, grid, 1, ch);
        }
    }
    atomic_write(path, out);
}

BevGrid load_grid_pfm(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_all(path);
    ByteReader reader(bytes, path.string());

    int stack = 0;
    {
        ByteReader peek(bytes, path.string());
        const std::string first = next_token(peek, path.string());
        if (first == "PFSTACK") {
            (void)next_token(reader, path.string()); // consume "PFSTACK"
            try {
                stack = std::stoi(next_token(reader, path.string()));
            } catch (const std::invalid_argument&) {
                throw MalformedHeader("'" + path.string() + "': bad PFSTACK channel count");
            }
            if (stack <= 0) {
                throw MalformedHeader("'" + path.string() + "': bad PFSTACK channel count");
            }
        }
    }

    BevGrid grid;
    if (stack == 0) {
        const PfmPlane plane = read_pfm_plane(reader, path.string());
        grid.rows = plane.rows;
        grid.cols = plane.cols;
        grid.channels = plane.channels;
        grid.data.assign(plane.data.begin(), plane.data.end());
    } else {
        for (int ch = 0; ch < stack; ++ch) {
            const PfmPlane plane = read_pfm_plane(reader, path.string());
            if (plane.channels != 1) {
                throw MalformedHeader("'" + path.string() + "': PFSTACK planes must be single-channel");
            }
            if (ch == 0) {
                grid.rows = plane.rows;
                grid.cols = plane.cols;
                grid.channels = stack;
                grid.data.assign(static_cast<std::size_t>(plane.rows) * plane.cols * stack, 0.0);
            } else if (plane.rows != grid.rows || plane.cols != grid.cols) {
                throw MalformedHeader("'" + path.string() + "': PFSTACK plane size mismatch");
            }
            for (int r = 0; r < grid.rows; ++r) {
                for (int c = 0; c < grid.cols; ++c) {
                    grid.at(r, c, ch) = plane.data[static_cast<std::size_t>(r) * grid.cols + c];
                }
            }
        }
    }
    if (reader.remaining() != 0) {
        throw MalformedHeader("'" + path.string() + "' has trailing bytes");
    }
    // Keep the world mapping consistent with the stored raster size.
    grid.config.x_min = 0.0;
    grid.config.x_max = grid.cols * grid.config.resolution;
    grid.config.y_min = 0.0;
    grid.config.y_max = grid.rows * grid.config.resolution;
    return grid;
}

void save_mask_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> mask, int rows,
                   int cols) {
    if (mask.size() != static_cast<std::size_t>(rows) * cols) {
        throw ConfigMismatch("mask size does not match dimensions");
    }
    std::vector<std::uint8_t> out;
    const std::string header = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    for (std::uint8_t m : mask) {
        out.push_back(m ? 255 : 0);
    }
    atomic_write(path, out);
}

std::vector<std::uint8_t> load_mask_pgm(const std::filesystem::path& path, int& rows, int& cols) {
    const std::vector<std::uint8_t> bytes = read_all(path);
    ByteReader reader(bytes, path.string());
    if (next_token(reader, path.string()) != "P5") {
        throw MalformedHeader("'" + path.string() + "' is not a binary PGM");
    }
    try {
        cols = std::stoi(next_token(reader, path.string()));
        rows = std::stoi(next_token(reader, path.string()));
        if (std::stoi(next_token(reader, path.string())) != 255) {
            throw MalformedHeader("'" + path.string() + "': expected maxval 255");
        }
    } catch (const std::invalid_argument&) {
        throw MalformedHeader("'" + path.string() + "': bad PGM header");
    }
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(rows) * cols);
    reader.read_bytes(raw.data(), raw.size());
    for (std::uint8_t& v : raw) {
        v = v > 127 ? 1 : 0;
    }
    return raw;
}

std::vector<std::uint8_t> preview_pca(const BevGrid& grid) {
    const int dim = grid.channels;
    const std::size_t n_px = static_cast<std::size_t>(grid.rows) * grid.cols;
    std::vector<double> projected(3 * n_px, 0.0);

    if (dim < 3) {
        // Replicate to gray: mean over whatever channels exist.
        for (std::size_t px = 0; px < n_px; ++px) {
            double mean = 0.0;
            for (int ch = 0; ch < dim; ++ch) {
                mean += grid.data[px * dim + ch];
            }
            mean /= std::max(dim, 1);
            projected[px] = projected[n_px + px] = projected[2 * n_px + px] = mean;
        }
    } else {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
        for (std::size_t px = 0; px < n_px; ++px) {
            for (int ch = 0; ch < dim; ++ch) {
                mean[ch] += grid.data[px * dim + ch];
            }
        }
        mean /= static_cast<double>(n_px);

        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
        for (std::size_t px = 0; px < n_px; ++px) {
            Eigen::VectorXd x(dim);
            for (int ch = 0; ch < dim; ++ch) {
                x[ch] = grid.data[px * dim + ch] - mean[ch];
            }
            cov += x * x.transpose();
        }
        cov /= static_cast<double>(n_px);

        // Top-3 eigenvectors by power iteration with deflation; fixed-seed init
        // keeps previews reproducible.
        Rng rng(0x9e3779b97f4a7c15ULL);
        for (int comp = 0; comp < 3; ++comp) {
            Eigen::VectorXd v(dim);
            for (int ch = 0; ch < dim; ++ch) {
                v[ch] = rng.uniform(-1.0, 1.0);
            }
            v.normalize();
            for (int it = 0; it < 100; ++it) {
                Eigen::VectorXd next = cov * v;
                const double norm = next.norm();
                if (norm < 1e-300) {
                    break; // deflated to nothing: zero-variance guard below applies
                }
                v = next / norm;
            }
            const double lambda = v.dot(cov * v);
            for (std::size_t px = 0; px < n_px; ++px) {
                double dot = 0.0;
                for (int ch = 0; ch < dim; ++ch) {
                    dot += (grid.data[px * dim + ch] - mean[ch]) * v[ch];
                }
                projected[static_cast<std::size_t>(comp) * n_px + px] = dot;
            }
            cov -= lambda * v * v.transpose();
        }
    }

    std::vector<std::uint8_t> out;
    const std::string header = "P6\n" + std::to_string(grid.cols) + " " + std::to_string(grid.rows) + "\n255\n";
    out.reserve(header.size() + 3 * n_px);
    out.insert(out.end(), header.begin(), header.end());

    double lo[3], hi[3];
    for (int comp = 0; comp < 3; ++comp) {
        lo[comp] = hi[comp] = projected[static_cast<std::size_t>(comp) * n_px];
        for (std::size_t px = 1; px < n_px; ++px) {
            const double v = projected[static_cast<std::size_t>(comp) * n_px + px];
            lo[comp] = std::min(lo[comp], v);
            hi[comp] = std::max(hi[comp], v);
        }
    }
    for (std::size_t px = 0; px < n_px; ++px) {
        for (int comp = 0; comp < 3; ++comp) {
            const double span = hi[comp] - lo[comp];
            double byte = 128.0; // zero-variance guard
            if (span > 1e-12) {
                byte = std::round(255.0 * (projected[static_cast<std::size_t>(comp) * n_px + px] - lo[comp]) / span);
            }
            out.push_back(static_cast<std::uint8_t>(std::clamp(byte, 0.0, 255.0)));
        }
    }
    return out;
}

RenderConfig load_render_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open render config '" + path.string() + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedHeader("render config '" + path.string() + "': " + e.what());
    }
    RenderConfig cfg;
    try {
        if (j.contains("x_range")) {
            cfg.x_min = j["x_range"].at(0).get<double>();
            cfg.x_max = j["x_range"].at(1).get<double>();
        }
        if (j.contains("y_range")) {
            cfg.y_min = j["y_range"].at(0).get<double>();
            cfg.y_max = j["y_range"].at(1).get<double>();
        }
        if (j.contains("resolution")) {
            cfg.resolution = j["resolution"].get<double>();
        }
        if (j.contains("alpha_min")) {
            cfg.alpha_min = j["alpha_min"].get<double>();
        }
        if (j.contains("alpha_max")) {
            cfg.alpha_max = j["alpha_max"].get<double>();
        }
        if (j.contains("t_stop")) {
            cfg.t_stop = j["t_stop"].get<double>();
        }
        if (j.contains("tile")) {
            cfg.tile = j["tile"].get<int>();
        }
        if (j.contains("dilation")) {
            cfg.dilation = j["dilation"].get<double>();
        }
        if (j.contains("cutoff")) {
            cfg.cutoff = j["cutoff"].get<double>();
        }
        if (j.contains("threads")) {
            cfg.threads = j["threads"].get<int>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationFailed("render config '" + path.string() + "': " + e.what());
    }
    return cfg;
}

void save_render_config(const std::filesystem::path& path, const RenderConfig& cfg) {
    nlohmann::json j;
    j["x_range"] = {cfg.x_min, cfg.x_max};
    j["y_range"] = {cfg.y_min, cfg.y_max};
    j["resolution"] = cfg.resolution;
    j["alpha_min"] = cfg.alpha_min;
    j["alpha_max"] = cfg.alpha_max;
    j["t_stop"] = cfg.t_stop;
    j["tile"] = cfg.tile;
    j["dilation"] = cfg.dilation;
    j["cutoff"] = cfg.cutoff;
    j["threads"] = cfg.threads;
    atomic_write(path, j.dump(2) + "\n");
}

} // namespace bevsplat
