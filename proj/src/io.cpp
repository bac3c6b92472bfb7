#include "dyn4d/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

namespace dyn4d {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw IoError("error while reading '" + path.string() + "'");
    }
    return ss.str();
}

void write_file(const fs::path &path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("error while writing '" + path.string() + "'");
    }
}

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(std::string_view s, T &out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

/// Whitespace-separated header tokens with '#' comments (PPM / PFM headers).
class HeaderReader {
public:
    HeaderReader(std::string_view bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

    std::string_view token(const char *what) {
        skip_space();
        const std::size_t start = pos_;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            ++pos_;
        }
        if (pos_ == start) {
            throw ParseError(name_ + ": missing " + what, start);
        }
        return bytes_.substr(start, pos_ - start);
    }

    template <class T>
    T number(const char *what) {
        const std::size_t at = next_offset();
        const std::string_view tok = token(what);
        T v{};
        if (!parse_number(tok, v)) {
            throw ParseError(name_ + ": malformed " + what + " '" + std::string(tok) + "'", at);
        }
        return v;
    }

    /// Consumes exactly one whitespace byte separating header and payload.
    std::size_t end_of_header() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            throw ParseError(name_ + ": header must end with a single whitespace byte", pos_);
        }
        return pos_ + 1;
    }

    std::size_t next_offset() {
        skip_space();
        return pos_;
    }

private:
    void skip_space() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
                    ++pos_;
                }
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

} // namespace

// --- images ---------------------------------------------------------------------

Map load_image(const fs::path &path) {
    const std::string bytes = read_file(path);
    const std::string name = path.string();
    HeaderReader h(bytes, name);
    const std::string_view magic = h.token("magic");
    if (magic != "P6" && magic != "P3") {
        throw IoError(name + ": unsupported image format (expected 8-bit RGB PPM, P6 or P3)");
    }
    const int w = h.number<int>("width");
    const int ht = h.number<int>("height");
    const int maxval = h.number<int>("maxval");
    if (w <= 0 || ht <= 0) {
        throw ParseError(name + ": non-positive image size", 0);
    }
    if (maxval != 255) {
        throw IoError(name + ": only 8-bit images (maxval 255) are supported, got maxval " + std::to_string(maxval));
    }
    Map img(w, ht, 3);
    const std::size_t n = img.size();
    if (magic == "P6") {
        const std::size_t start = h.end_of_header();
        if (bytes.size() - start != n) {
            throw ParseError(name + ": expected " + std::to_string(n) + " pixel bytes, found " +
                                 std::to_string(bytes.size() - start),
                             bytes.size());
        }
        for (std::size_t i = 0; i < n; ++i) {
            img.data()[i] = static_cast<unsigned char>(bytes[start + i]) / 255.0;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t at = h.next_offset();
            const int v = h.number<int>("sample");
            if (v < 0 || v > 255) {
                throw ParseError(name + ": sample out of range", at);
            }
            img.data()[i] = v / 255.0;
        }
    }
    return img;
}

namespace {

unsigned char to_byte(double v) {
    if (std::isnan(v)) {
        return 0;
    }
    // nearbyint rounds half to even under the default rounding mode.
    return static_cast<unsigned char>(std::nearbyint(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_p6(const Map &m, bool gray, const fs::path &path) {
    std::string out = "P6\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + static_cast<std::size_t>(m.width()) * m.height() * 3);
    std::size_t k = header;
    for (int row = 0; row < m.height(); ++row) {
        for (int col = 0; col < m.width(); ++col) {
            for (int c = 0; c < 3; ++c) {
                out[k++] = static_cast<char>(to_byte(m(row, col, gray ? 0 : c)));
            }
        }
    }
    write_file(path, out);
}

} // namespace

void save_image(const Map &image, const fs::path &path) {
    if (image.channels() != 3 || image.empty()) {
        throw ContractError("save_image expects a non-empty HxWx3 map, got " + image.shape_string());
    }
    write_p6(image, false, path);
}

void save_gray_image(const Map &gray, const fs::path &path) {
    if (gray.channels() != 1 || gray.empty()) {
        throw ContractError("save_gray_image expects a non-empty HxWx1 map, got " + gray.shape_string());
    }
    write_p6(gray, true, path);
}

// --- float maps -----------------------------------------------------------------

std::string encode_float_map(const FloatMap &map) {
    if (map.channels() != 1 && map.channels() != 3) {
        throw ContractError("float maps must have 1 or 3 channels, got " + map.shape_string());
    }
    std::string out = std::string(map.channels() == 3 ? "PF" : "Pf") + "\n" + std::to_string(map.width()) + " " +
                      std::to_string(map.height()) + "\n-1.0\n";
    const std::size_t row_floats = static_cast<std::size_t>(map.width()) * map.channels();
    for (int row = map.height() - 1; row >= 0; --row) {
        const float *src = map.data().data() + static_cast<std::size_t>(row) * row_floats;
        out.append(reinterpret_cast<const char *>(src), row_floats * sizeof(float));
    }
    return out;
}

FloatMap parse_float_map(std::string_view bytes, const std::string &name) {
    HeaderReader h(bytes, name);
    const std::string_view magic = h.token("magic");
    int channels = 0;
    if (magic == "PF") {
        channels = 3;
    } else if (magic == "Pf") {
        channels = 1;
    } else {
        throw ParseError(name + ": bad float map magic '" + std::string(magic) + "'", 0);
    }
    const std::size_t size_at = h.next_offset();
    const int w = h.number<int>("width");
    const int ht = h.number<int>("height");
    if (w < 0 || ht < 0) {
        throw ParseError(name + ": negative map size", size_at);
    }
    const std::size_t scale_at = h.next_offset();
    const double scale = h.number<double>("scale");
    if (scale == 0.0 || !std::isfinite(scale)) {
        throw ParseError(name + ": scale must be non-zero and finite", scale_at);
    }
    const bool big_endian = scale > 0.0;
    const std::size_t start = h.end_of_header();
    FloatMap map(w, ht, channels);
    const std::size_t expected = map.size() * sizeof(float);
    if (bytes.size() - start != expected) {
        throw ParseError(name + ": expected " + std::to_string(expected) + " payload bytes, found " +
                             std::to_string(bytes.size() - start),
                         std::min(bytes.size(), start + expected));
    }
    const std::size_t row_floats = static_cast<std::size_t>(w) * channels;
    for (int row = 0; row < ht; ++row) {
        const char *src = bytes.data() + start + static_cast<std::size_t>(ht - 1 - row) * row_floats * sizeof(float);
        float *dst = map.data().data() + static_cast<std::size_t>(row) * row_floats;
        std::memcpy(dst, src, row_floats * sizeof(float));
        if (big_endian) {
            for (std::size_t i = 0; i < row_floats; ++i) {
                dst[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(dst[i])));
            }
        }
    }
    return map;
}

void save_float_map(const FloatMap &map, const fs::path &path) { write_file(path, encode_float_map(map)); }

FloatMap load_float_map(const fs::path &path) { return parse_float_map(read_file(path), path.string()); }

void save_map(const Map &map, const fs::path &path) { save_float_map(grid_cast<float>(map), path); }

Map load_map(const fs::path &path) { return grid_cast<double>(load_float_map(path)); }

// --- scenes ---------------------------------------------------------------------

namespace {

constexpr char kSceneMagic[4] = {'D', '4', 'G', 'S'};
constexpr std::uint32_t kSceneVersion = 1;

class Writer {
public:
    template <class T>
    void put(T v) {
        const auto *p = reinterpret_cast<const char *>(&v);
        out_.append(p, sizeof(T));
    }
    void put_bytes(const char *p, std::size_t n) { out_.append(p, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string_view bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

    template <class T>
    T get(const char *what) {
        if (bytes_.size() - pos_ < sizeof(T)) {
            throw ParseError(name_ + ": truncated scene while reading " + what, pos_);
        }
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string &name() const { return name_; }

private:
    std::string_view bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

} // namespace

std::string encode_scene(const Scene &scene) {
    scene.cloud.validate();
    const int ncoef = sh_coeff_count(scene.cloud.sh_degree);
    Writer w;
    w.put_bytes(kSceneMagic, 4);
    w.put<std::uint32_t>(kSceneVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.cloud.sh_degree));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.cloud.count(Frame::first)));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(scene.cloud.count(Frame::second)));
    w.put<std::uint32_t>(scene.cloud.canonicalized ? 1u : 0u);
    const CameraIntrinsics &K = scene.intrinsics;
    for (double v : {K.fx, K.fy, K.cx, K.cy}) {
        w.put<double>(v);
    }
    w.put<std::int32_t>(K.width);
    w.put<std::int32_t>(K.height);
    for (int i = 0; i < 4; ++i) {
        w.put<double>(scene.pose.q[i]);
    }
    for (int i = 0; i < 3; ++i) {
        w.put<double>(scene.pose.t[i]);
    }
    for (const RawGaussian &g : scene.cloud.gaussians) {
        const GaussianParams &p = g.raw;
        auto put3 = [&](const Vec3 &v) {
            for (int i = 0; i < 3; ++i) {
                w.put<float>(static_cast<float>(v[i]));
            }
        };
        put3(p.center);
        put3(p.motion);
        for (int i = 0; i < 4; ++i) {
            w.put<float>(static_cast<float>(p.rotation[i]));
        }
        put3(p.log_scale);
        for (int k = 0; k < ncoef; ++k) {
            put3(p.sh[k]);
        }
        w.put<float>(static_cast<float>(p.opacity_logit));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(g.frame));
        w.put<std::int32_t>(g.pixel.row);
        w.put<std::int32_t>(g.pixel.col);
    }
    return w.take();
}

Scene decode_scene(std::string_view bytes, const std::string &name) {
    Reader r(bytes, name);
    char magic[4];
    for (char &c : magic) {
        c = r.get<char>("magic");
    }
    if (std::memcmp(magic, kSceneMagic, 4) != 0) {
        throw ParseError(name + ": not a scene container (bad magic)", 0);
    }
    const std::size_t version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kSceneVersion) {
        throw ParseError(name + ": unsupported scene version " + std::to_string(version), version_at);
    }
    const std::size_t degree_at = r.offset();
    const auto degree = r.get<std::uint32_t>("SH degree");
    if (degree > static_cast<std::uint32_t>(kMaxShDegree)) {
        throw ParseError(name + ": SH degree " + std::to_string(degree) + " out of range", degree_at);
    }
    const auto n_first = r.get<std::uint32_t>("first-frame count");
    const auto n_second = r.get<std::uint32_t>("second-frame count");
    const std::size_t flags_at = r.offset();
    const auto flags = r.get<std::uint32_t>("flags");
    if (flags > 1u) {
        throw ParseError(name + ": unknown flag bits", flags_at);
    }
    Scene s;
    s.cloud.sh_degree = static_cast<int>(degree);
    s.cloud.canonicalized = (flags & 1u) != 0;
    s.intrinsics.fx = r.get<double>("fx");
    s.intrinsics.fy = r.get<double>("fy");
    s.intrinsics.cx = r.get<double>("cx");
    s.intrinsics.cy = r.get<double>("cy");
    s.intrinsics.width = r.get<std::int32_t>("width");
    s.intrinsics.height = r.get<std::int32_t>("height");
    for (int i = 0; i < 4; ++i) {
        s.pose.q[i] = r.get<double>("pose rotation");
    }
    for (int i = 0; i < 3; ++i) {
        s.pose.t[i] = r.get<double>("pose translation");
    }
    const int ncoef = sh_coeff_count(s.cloud.sh_degree);
    const std::size_t record = sizeof(float) * (14 + 3 * ncoef) + 3 * sizeof(std::uint32_t);
    const std::size_t total = static_cast<std::size_t>(n_first) + n_second;
    if (r.remaining() != total * record) {
        throw ParseError(name + ": expected " + std::to_string(total) + " Gaussian records (" +
                             std::to_string(total * record) + " bytes), found " + std::to_string(r.remaining()) +
                             " bytes",
                         r.offset());
    }
    s.cloud.gaussians.resize(total);
    std::size_t seen_second = 0;
    for (RawGaussian &g : s.cloud.gaussians) {
        GaussianParams &p = g.raw;
        auto get3 = [&](Vec3 &v, const char *what) {
            for (int i = 0; i < 3; ++i) {
                v[i] = r.get<float>(what);
            }
        };
        get3(p.center, "center");
        get3(p.motion, "motion");
        for (int i = 0; i < 4; ++i) {
            p.rotation[i] = r.get<float>("rotation");
        }
        get3(p.log_scale, "scale");
        for (int k = 0; k < ncoef; ++k) {
            get3(p.sh[k], "color");
        }
        p.opacity_logit = r.get<float>("opacity");
        const std::size_t tag_at = r.offset();
        const auto frame = r.get<std::uint32_t>("frame tag");
        if (frame > 1u) {
            throw ParseError(name + ": invalid frame tag " + std::to_string(frame), tag_at);
        }
        g.frame = static_cast<Frame>(frame);
        seen_second += frame;
        g.pixel.row = r.get<std::int32_t>("pixel row");
        g.pixel.col = r.get<std::int32_t>("pixel column");
    }
    if (seen_second != n_second) {
        throw ParseError(name + ": frame tags disagree with the header counts", 24);
    }
    return s;
}

void save_scene(const Scene &scene, const fs::path &path) { write_file(path, encode_scene(scene)); }

Scene load_scene(const fs::path &path) { return decode_scene(read_file(path), path.string()); }

Scene quantize_scene(const Scene &scene) { return decode_scene(encode_scene(scene)); }

// --- configuration -------------------------------------------------------------

namespace {

struct ConfigKey {
    std::string key;
    std::function<std::string(const Config &)> get;
    std::function<void(Config &, std::string_view)> set; // throws std::invalid_argument on bad values
};

template <class T>
T parse_value(std::string_view v) {
    T out{};
    if (!parse_number(v, out)) {
        throw std::invalid_argument("expected a number");
    }
    return out;
}

bool parse_bool(std::string_view v) {
    v = trim(v);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true or false");
}

template <class Ref>
ConfigKey real(std::string key, Ref ref) {
    return {std::move(key), [ref](const Config &c) { return format_double(ref(const_cast<Config &>(c))); },
            [ref](Config &c, std::string_view v) { ref(c) = parse_value<double>(v); }};
}

template <class T, class Ref>
ConfigKey integer(std::string key, Ref ref) {
    return {std::move(key), [ref](const Config &c) { return std::to_string(ref(const_cast<Config &>(c))); },
            [ref](Config &c, std::string_view v) { ref(c) = parse_value<T>(v); }};
}

template <class Ref>
ConfigKey boolean(std::string key, Ref ref) {
    return {std::move(key), [ref](const Config &c) { return std::string(ref(const_cast<Config &>(c)) ? "true" : "false"); },
            [ref](Config &c, std::string_view v) { ref(c) = parse_bool(v); }};
}

template <class E, class Ref>
ConfigKey choice(std::string key, std::vector<std::pair<std::string, E>> names, Ref ref) {
    return {std::move(key),
            [ref, names](const Config &c) {
                for (const auto &[n, e] : names) {
                    if (ref(const_cast<Config &>(c)) == e) return n;
                }
                return std::string("?");
            },
            [ref, names](Config &c, std::string_view v) {
                v = trim(v);
                for (const auto &[n, e] : names) {
                    if (v == n) {
                        ref(c) = e;
                        return;
                    }
                }
                std::string allowed;
                for (const auto &[n, e] : names) {
                    allowed += (allowed.empty() ? "" : ", ") + n;
                }
                throw std::invalid_argument("expected one of: " + allowed);
            }};
}

const std::vector<ConfigKey> &config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        k.push_back(integer<int>("iterations", [](Config &c) -> int & { return c.fit.iterations; }));
        k.push_back(integer<std::uint64_t>("seed", [](Config &c) -> std::uint64_t & { return c.fit.seed; }));
        k.push_back(integer<int>("threads", [](Config &c) -> int & { return c.fit.raster.threads; }));
        k.push_back(integer<int>("log_every", [](Config &c) -> int & { return c.fit.log_every; }));
        k.push_back(real("lr.center", [](Config &c) -> double & { return c.fit.lr.center; }));
        k.push_back(real("lr.motion", [](Config &c) -> double & { return c.fit.lr.motion; }));
        k.push_back(real("lr.rotation", [](Config &c) -> double & { return c.fit.lr.rotation; }));
        k.push_back(real("lr.scale", [](Config &c) -> double & { return c.fit.lr.scale; }));
        k.push_back(real("lr.color", [](Config &c) -> double & { return c.fit.lr.color; }));
        k.push_back(real("lr.opacity", [](Config &c) -> double & { return c.fit.lr.opacity; }));
        k.push_back(real("lr.pose", [](Config &c) -> double & { return c.fit.lr.pose; }));
        k.push_back(choice<LrSchedule>("schedule", {{"cosine", LrSchedule::cosine}, {"constant", LrSchedule::constant}},
                                       [](Config &c) -> LrSchedule & { return c.fit.schedule; }));
        k.push_back(real("final_lr_fraction", [](Config &c) -> double & { return c.fit.final_lr_fraction; }));
        k.push_back(real("beta1", [](Config &c) -> double & { return c.fit.beta1; }));
        k.push_back(real("beta2", [](Config &c) -> double & { return c.fit.beta2; }));
        k.push_back(real("epsilon", [](Config &c) -> double & { return c.fit.epsilon; }));
        k.push_back(real("initial_depth", [](Config &c) -> double & { return c.fit.initial_depth; }));
        k.push_back({"initial_depth_map", [](const Config &c) { return c.initial_depth_map; },
                     [](Config &c, std::string_view v) { c.initial_depth_map = std::string(trim(v)); }});
        k.push_back(real("init_jitter", [](Config &c) -> double & { return c.fit.init_jitter; }));
        k.push_back(integer<int>("sh_degree", [](Config &c) -> int & { return c.fit.sh_degree; }));
        k.push_back(boolean("freeze.center", [](Config &c) -> bool & { return c.fit.freeze.center; }));
        k.push_back(boolean("freeze.motion", [](Config &c) -> bool & { return c.fit.freeze.motion; }));
        k.push_back(boolean("freeze.rotation", [](Config &c) -> bool & { return c.fit.freeze.rotation; }));
        k.push_back(boolean("freeze.scale", [](Config &c) -> bool & { return c.fit.freeze.scale; }));
        k.push_back(boolean("freeze.color", [](Config &c) -> bool & { return c.fit.freeze.color; }));
        k.push_back(boolean("freeze.opacity", [](Config &c) -> bool & { return c.fit.freeze.opacity; }));
        k.push_back(boolean("freeze.pose", [](Config &c) -> bool & { return c.fit.freeze.pose; }));
        k.push_back(real("weight.point", [](Config &c) -> double & { return c.fit.weights.point; }));
        k.push_back(real("weight.pose", [](Config &c) -> double & { return c.fit.weights.pose; }));
        k.push_back(real("weight.lpips", [](Config &c) -> double & { return c.fit.weights.lpips; }));
        k.push_back(real("weight.smooth", [](Config &c) -> double & { return c.fit.weights.smooth; }));
        k.push_back(real("raster.cov2d_epsilon", [](Config &c) -> double & { return c.fit.raster.cov2d_epsilon; }));
        k.push_back(real("raster.cutoff_sigma", [](Config &c) -> double & { return c.fit.raster.cutoff_sigma; }));
        k.push_back(real("raster.z_near", [](Config &c) -> double & { return c.fit.raster.z_near; }));
        k.push_back(
            real("raster.min_transmittance", [](Config &c) -> double & { return c.fit.raster.min_transmittance; }));
        k.push_back(integer<int>("raster.tile_size", [](Config &c) -> int & { return c.fit.raster.tile_size; }));
        k.push_back(real("raster.background.r", [](Config &c) -> double & { return c.fit.raster.background[0]; }));
        k.push_back(real("raster.background.g", [](Config &c) -> double & { return c.fit.raster.background[1]; }));
        k.push_back(real("raster.background.b", [](Config &c) -> double & { return c.fit.raster.background[2]; }));
        k.push_back(choice<AveragingMode>(
            "eval.mode", {{"per-frame", AveragingMode::per_frame}, {"per-valid-pixel", AveragingMode::per_valid_pixel}},
            [](Config &c) -> AveragingMode & { return c.eval.mode; }));
        k.push_back(boolean("eval.align", [](Config &c) -> bool & { return c.eval.align; }));
        k.push_back(choice<AlignStatistic>("eval.point_statistic",
                                           {{"z", AlignStatistic::z_depth}, {"norm", AlignStatistic::norm}},
                                           [](Config &c) -> AlignStatistic & { return c.eval.point_statistic; }));
        k.push_back(real("eval.delta_ratio", [](Config &c) -> double & { return c.eval.delta_ratio; }));
        k.push_back(real("eval.flow_radius", [](Config &c) -> double & { return c.eval.flow_radius; }));
        k.push_back(choice<TrajectoryAlignment>(
            "eval.trajectory_alignment", {{"sim3", TrajectoryAlignment::sim3}, {"se3", TrajectoryAlignment::se3}},
            [](Config &c) -> TrajectoryAlignment & { return c.eval.trajectory_alignment; }));
        k.push_back(real("tasks.alpha_threshold", [](Config &c) -> double & { return c.alpha_threshold; }));
        k.push_back(real("tasks.motion_threshold", [](Config &c) -> double & { return c.motion_threshold; }));
        k.push_back(real("tasks.flow_max_norm", [](Config &c) -> double & { return c.flow_max_norm; }));
        return k;
    }();
    return keys;
}

void validate_config(const Config &c) {
    c.fit.validate();
    const RasterSettings &r = c.fit.raster;
    if (!(r.cov2d_epsilon >= 0.0) || !(r.cutoff_sigma > 0.0) || !(r.z_near > 0.0) ||
        !(r.min_transmittance >= 0.0 && r.min_transmittance < 1.0) || r.tile_size < 1) {
        throw InvalidParameter("invalid rasterizer settings in config");
    }
    if (!(c.eval.delta_ratio > 1.0) || !(c.eval.flow_radius > 0.0)) {
        throw InvalidParameter("eval.delta_ratio must exceed 1 and eval.flow_radius must be positive");
    }
    if (!(c.alpha_threshold >= 0.0 && c.alpha_threshold < 1.0) || !(c.motion_threshold >= 0.0) ||
        !(c.flow_max_norm >= 0.0)) {
        throw InvalidParameter("invalid tasks thresholds in config");
    }
}

} // namespace

bool Config::operator==(const Config &other) const {
    for (const ConfigKey &k : config_keys()) {
        if (k.get(*this) != k.get(other)) {
            return false;
        }
    }
    return fit.initial_depth_map == other.fit.initial_depth_map;
}

Config parse_config(std::string_view text, const std::string &name) {
    Config c;
    std::map<std::string, bool, std::less<>> seen;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, eol - pos);
        const std::size_t line_start = pos;
        pos = eol + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            if (eol == text.size()) break;
            continue;
        }
        const auto eq = line.find('=');
        const std::string where = name + ":" + std::to_string(line_no);
        if (eq == std::string_view::npos) {
            throw ParseError(where + ": expected key = value", line_start);
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        const ConfigKey *entry = nullptr;
        for (const ConfigKey &k : config_keys()) {
            if (k.key == key) {
                entry = &k;
                break;
            }
        }
        if (!entry) {
            throw InvalidParameter(where + ": unknown config key '" + key + "'");
        }
        if (seen.count(key)) {
            throw InvalidParameter(where + ": duplicate config key '" + key + "'");
        }
        seen[key] = true;
        try {
            entry->set(c, value);
        } catch (const std::invalid_argument &e) {
            throw InvalidParameter(where + ": bad value '" + std::string(value) + "' for '" + key + "': " + e.what());
        }
        if (eol == text.size()) break;
    }
    validate_config(c);
    return c;
}

std::string serialize_config(const Config &config) {
    std::string out = "# dyn4d configuration (key = value)\n";
    for (const ConfigKey &k : config_keys()) {
        out += k.key + " = " + k.get(config) + "\n";
    }
    return out;
}

Config load_config(const fs::path &path) { return parse_config(read_file(path), path.string()); }

void save_config(const Config &config, const fs::path &path) { write_file(path, serialize_config(config)); }

// --- cameras and trajectories -------------------------------------------------

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        lines.push_back(text.substr(pos, eol - pos));
        pos = eol + 1;
    }
    return lines;
}

std::vector<double> parse_numbers(std::string_view line, std::size_t expected, const std::string &where,
                                  std::size_t offset) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (true) {
        while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
        if (pos >= line.size()) break;
        std::size_t end = pos;
        while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
        double v;
        if (!parse_number(line.substr(pos, end - pos), v)) {
            throw ParseError(where + ": malformed number '" + std::string(line.substr(pos, end - pos)) + "'",
                             offset + pos);
        }
        out.push_back(v);
        pos = end;
    }
    if (out.size() != expected) {
        throw ParseError(where + ": expected " + std::to_string(expected) + " numbers, found " +
                             std::to_string(out.size()),
                         offset);
    }
    return out;
}

} // namespace

CameraIntrinsics parse_intrinsics(std::string_view text, const std::string &name) {
    const auto lines = split_lines(text);
    if (lines.size() < 3) {
        throw ParseError(name + ": intrinsics need three numeric lines (fx fy / cx cy / width height)", text.size());
    }
    std::size_t offset = 0;
    std::array<std::vector<double>, 3> rows;
    for (int i = 0; i < 3; ++i) {
        rows[i] = parse_numbers(lines[i], 2, name + ":" + std::to_string(i + 1), offset);
        offset += lines[i].size() + 1;
    }
    CameraIntrinsics K{rows[0][0], rows[0][1], rows[1][0], rows[1][1], static_cast<int>(rows[2][0]),
                       static_cast<int>(rows[2][1])};
    if (K.width != rows[2][0] || K.height != rows[2][1]) {
        throw ParseError(name + ": width and height must be integers", offset - lines[2].size() - 1);
    }
    K.validate();
    return K;
}

std::string serialize_intrinsics(const CameraIntrinsics &K) {
    return format_double(K.fx) + " " + format_double(K.fy) + "\n" + format_double(K.cx) + " " + format_double(K.cy) +
           "\n" + std::to_string(K.width) + " " + std::to_string(K.height) + "\n# fx fy / cx cy / width height\n";
}

CameraIntrinsics load_intrinsics(const fs::path &path) { return parse_intrinsics(read_file(path), path.string()); }

void save_intrinsics(const CameraIntrinsics &K, const fs::path &path) { write_file(path, serialize_intrinsics(K)); }

Trajectory parse_trajectory(std::string_view text, const std::string &name) {
    Trajectory traj;
    std::size_t offset = 0;
    int line_no = 0;
    for (std::string_view line : split_lines(text)) {
        ++line_no;
        const std::size_t start = offset;
        offset += line.size() + 1;
        std::string_view body = line;
        if (const auto hash = body.find('#'); hash != std::string_view::npos) {
            body = body.substr(0, hash);
        }
        if (trim(body).empty()) {
            continue;
        }
        const auto v = parse_numbers(body, 8, name + ":" + std::to_string(line_no), start);
        TimedPose p;
        p.timestamp = v[0];
        p.pose.t = Vec3(v[1], v[2], v[3]);
        p.pose.q = Quat(v[4], v[5], v[6], v[7]);
        if (p.pose.q.norm() < 1e-12) {
            throw ParseError(name + ":" + std::to_string(line_no) + ": zero quaternion", start);
        }
        traj.push_back(p);
    }
    return traj;
}

std::string serialize_trajectory(const Trajectory &traj) {
    std::string out = "# timestamp tx ty tz qw qx qy qz (camera to world)\n";
    for (const TimedPose &p : traj) {
        out += format_double(p.timestamp);
        for (int i = 0; i < 3; ++i) out += " " + format_double(p.pose.t[i]);
        for (int i = 0; i < 4; ++i) out += " " + format_double(p.pose.q[i]);
        out += "\n";
    }
    return out;
}

Trajectory load_trajectory(const fs::path &path) { return parse_trajectory(read_file(path), path.string()); }

void save_trajectory(const Trajectory &traj, const fs::path &path) { write_file(path, serialize_trajectory(traj)); }

Trajectory pose_to_trajectory(const RelativePose &pose) {
    // The scene pose maps canonical (first camera = world) into the second
    // camera, so the second camera-to-world transform is its inverse.
    return {{0.0, RelativePose::identity()}, {1.0, invert_pose({quat_normalize(pose.q), pose.t})}};
}

RelativePose trajectory_to_pose(const Trajectory &traj) {
    if (traj.size() != 2) {
        throw ContractError("a two-frame trajectory is required, got " + std::to_string(traj.size()) + " poses");
    }
    const RelativePose first{quat_normalize(traj[0].pose.q), traj[0].pose.t};
    const RelativePose second{quat_normalize(traj[1].pose.q), traj[1].pose.t};
    // world -> second camera, expressed relative to the first camera.
    return compose_pose(invert_pose(second), first);
}

// --- reports and visualization ----------------------------------------------------

std::string fit_report_key_values(const FitReport &report) {
    std::string out;
    out += "iterations_run=" + std::to_string(report.trace.size()) + "\n";
    out += std::string("converged=") + (report.converged ? "true" : "false") + "\n";
    if (!report.trace.empty()) {
        const IterationRecord &last = report.trace.back();
        out += "final_total=" + format_double(last.total) + "\n";
        out += "final_motion=" + format_double(last.components.motion) + "\n";
        out += "final_point=" + format_double(last.components.point) + "\n";
        out += "final_pose=" + format_double(last.components.pose) + "\n";
        out += "final_photo=" + format_double(last.components.photo) + "\n";
        out += "final_smooth=" + format_double(last.components.smooth) + "\n";
    }
    if (!report.message.empty()) {
        out += "message=" + report.message + "\n";
    }
    return out;
}

std::string fit_report_csv(const FitReport &report) {
    std::string out = "iteration,total,motion,point,pose,photo,smooth\n";
    for (const IterationRecord &r : report.trace) {
        out += std::to_string(r.iteration) + "," + format_double(r.total) + "," + format_double(r.components.motion) +
               "," + format_double(r.components.point) + "," + format_double(r.components.pose) + "," +
               format_double(r.components.photo) + "," + format_double(r.components.smooth) + "\n";
    }
    return out;
}

namespace {

// Middlebury wheel: segment lengths RY, YG, GC, CB, BM, MR.
std::vector<Vec3> make_color_wheel() {
    const int counts[6] = {15, 6, 4, 11, 13, 6};
    std::vector<Vec3> wheel;
    auto ramp = [&](int n, auto color) {
        for (int i = 0; i < n; ++i) wheel.push_back(color(static_cast<double>(i) / n));
    };
    ramp(counts[0], [](double f) { return Vec3(1, f, 0); });
    ramp(counts[1], [](double f) { return Vec3(1 - f, 1, 0); });
    ramp(counts[2], [](double f) { return Vec3(0, 1, f); });
    ramp(counts[3], [](double f) { return Vec3(0, 1 - f, 1); });
    ramp(counts[4], [](double f) { return Vec3(f, 0, 1); });
    ramp(counts[5], [](double f) { return Vec3(1, 0, 1 - f); });
    return wheel;
}

} // namespace

Map flow_to_color(const Map &flow, const Mask &valid, double max_norm) {
    if (flow.channels() < 2) {
        throw ContractError("flow_to_color expects at least 2 channels, got " + flow.shape_string());
    }
    if (!valid.empty() && (valid.width() != flow.width() || valid.height() != flow.height())) {
        throw ContractError("flow mask " + valid.shape_string() + " does not match flow " + flow.shape_string());
    }
    static const std::vector<Vec3> wheel = make_color_wheel();
    const int ncols = static_cast<int>(wheel.size());
    auto ok = [&](int r, int c) {
        return (valid.empty() || valid(r, c)) && std::isfinite(flow(r, c, 0)) && std::isfinite(flow(r, c, 1));
    };
    if (!(max_norm > 0.0)) {
        max_norm = 0.0;
        for (int r = 0; r < flow.height(); ++r)
            for (int c = 0; c < flow.width(); ++c)
                if (ok(r, c)) max_norm = std::max(max_norm, std::hypot(flow(r, c, 0), flow(r, c, 1)));
        if (max_norm == 0.0) max_norm = 1.0;
    }
    Map out(flow.width(), flow.height(), 3);
    for (int r = 0; r < flow.height(); ++r) {
        for (int c = 0; c < flow.width(); ++c) {
            if (!ok(r, c)) continue;
            const double u = flow(r, c, 0) / max_norm, v = flow(r, c, 1) / max_norm;
            const double rad = std::min(std::hypot(u, v), 1.0);
            const double a = std::atan2(-v, -u) / std::numbers::pi;
            const double fk = (a + 1.0) / 2.0 * (ncols - 1);
            const int k0 = static_cast<int>(std::floor(fk));
            const int k1 = (k0 + 1) % ncols;
            const double f = fk - k0;
            const Vec3 col = (1.0 - f) * wheel[k0] + f * wheel[k1];
            for (int ch = 0; ch < 3; ++ch) {
                out(r, c, ch) = 1.0 - rad * (1.0 - col[ch]);
            }
        }
    }
    return out;
}

} // namespace dyn4d
