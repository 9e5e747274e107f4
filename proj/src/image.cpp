#include "pfadseg/image.hpp"

#include <png.h>
#include <stdio.h>
// jpeglib.h needs FILE declared first.
#include <jpeglib.h>

#include <algorithm>
#include <bit>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "pfadseg/autograd.hpp"
#include "pfadseg/errors.hpp"

namespace pfadseg {

namespace fs = std::filesystem;

Image::Image(Tensor t) : pixels(std::move(t)) {
    const Shape& s = pixels.shape();
    if (s.n != 1 || s.c != 3) throw InvalidArgument("image tensor must be 1x3xHxW, got " + s.str());
}

std::size_t AnomalyMask::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

double AnomalyMask::coverage() const {
    return data.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(data.size());
}

Tensor AnomalyMask::to_tensor() const {
    Tensor t({1, 1, height, width});
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = data[i];
    return t;
}

ProbMap ProbMap::from_tensor(const Tensor& t, int n) {
    const Shape& s = t.shape();
    ProbMap m(s.h, s.w);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) m.at(y, x) = t.at(n, 0, y, x);
    return m;
}

Image resize_bilinear(const Image& image, int height, int width) {
    if (image.height() == height && image.width() == width) return image;
    return Image(ag::upsample_bilinear(ag::constant(image.pixels), height, width).value());
}

ProbMap resize_bilinear(const ProbMap& map, int height, int width) {
    if (map.height == height && map.width == width) return map;
    Tensor t({1, 1, map.height, map.width}, map.data);
    return ProbMap::from_tensor(ag::upsample_bilinear(ag::constant(std::move(t)), height, width).value());
}

namespace {

enum class Format { Png, Jpeg, Unknown };

Format sniff(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open image " + path.string());
    std::array<unsigned char, 8> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    if (in.gcount() >= 8 && png_sig_cmp(head.data(), 0, 8) == 0) return Format::Png;
    if (in.gcount() >= 3 && head[0] == 0xFF && head[1] == 0xD8 && head[2] == 0xFF) return Format::Jpeg;
    return Format::Unknown;
}

struct PngImage {
    png_image img{};
    PngImage() {
        img.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&img); }
};

struct JpegErr {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

/// Decodes a JPEG into interleaved 8-bit samples with 1 or 3 components.
/// Only POD state lives across the setjmp boundary.
bool decode_jpeg(FILE* file, bool header_only, ImageInfo& info, std::vector<unsigned char>& out,
                 std::string& error) {
    jpeg_decompress_struct cinfo{};
    JpegErr err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        error = err.message;
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file);
    jpeg_read_header(&cinfo, TRUE);
    info.width = static_cast<int>(cinfo.image_width);
    info.height = static_cast<int>(cinfo.image_height);
    info.channels = cinfo.num_components;
    if (!header_only) {
        cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
        jpeg_start_decompress(&cinfo);
        const std::size_t stride = static_cast<std::size_t>(cinfo.output_width) * cinfo.output_components;
        out.resize(stride * cinfo.output_height);
        info.channels = cinfo.output_components;
        while (cinfo.output_scanline < cinfo.output_height) {
            JSAMPROW row = out.data() + stride * cinfo.output_scanline;
            jpeg_read_scanlines(&cinfo, &row, 1);
        }
        jpeg_finish_decompress(&cinfo);
    }
    jpeg_destroy_decompress(&cinfo);
    return true;
}

struct Raster8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<unsigned char> data;
};

Raster8 read_raster(const fs::path& path, bool gray) {
    const Format fmt = sniff(path);
    Raster8 r;
    if (fmt == Format::Png) {
        PngImage p;
        if (!png_image_begin_read_from_file(&p.img, path.c_str())) {
            throw LoadError("cannot decode PNG " + path.string() + ": " + p.img.message);
        }
        p.img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
        r.width = static_cast<int>(p.img.width);
        r.height = static_cast<int>(p.img.height);
        r.channels = gray ? 1 : 3;
        r.data.resize(PNG_IMAGE_SIZE(p.img));
        if (!png_image_finish_read(&p.img, nullptr, r.data.data(), 0, nullptr)) {
            throw LoadError("cannot decode PNG " + path.string() + ": " + p.img.message);
        }
        return r;
    }
    if (fmt == Format::Jpeg) {
        FilePtr f(std::fopen(path.c_str(), "rb"));
        if (!f) throw LoadError("cannot open image " + path.string());
        ImageInfo info;
        std::vector<unsigned char> raw;
        std::string error;
        if (!decode_jpeg(f.get(), false, info, raw, error)) {
            throw LoadError("cannot decode JPEG " + path.string() + ": " + error);
        }
        r.width = info.width;
        r.height = info.height;
        r.channels = gray ? 1 : 3;
        const std::size_t n = static_cast<std::size_t>(info.width) * info.height;
        r.data.resize(n * r.channels);
        for (std::size_t i = 0; i < n; ++i) {
            if (info.channels == 1) {
                for (int c = 0; c < r.channels; ++c) r.data[i * r.channels + c] = raw[i];
            } else if (gray) {
                const double y = 0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2];
                r.data[i] = static_cast<unsigned char>(std::lround(std::clamp(y, 0.0, 255.0)));
            } else {
                std::copy_n(raw.begin() + static_cast<std::ptrdiff_t>(3 * i), 3, r.data.begin() + static_cast<std::ptrdiff_t>(3 * i));
            }
        }
        return r;
    }
    throw LoadError("unsupported image format: " + path.string());
}

void write_png(const fs::path& path, png_uint_32 format, int width, int height, const void* data) {
    PngImage p;
    p.img.width = static_cast<png_uint_32>(width);
    p.img.height = static_cast<png_uint_32>(height);
    p.img.format = format;
    if (!png_image_write_to_file(&p.img, path.c_str(), 0, data, 0, nullptr)) {
        throw LoadError("cannot write PNG " + path.string() + ": " + p.img.message);
    }
}

unsigned char to_u8(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ImageInfo probe_image(const fs::path& path) {
    const Format fmt = sniff(path);
    ImageInfo info;
    if (fmt == Format::Png) {
        PngImage p;
        if (!png_image_begin_read_from_file(&p.img, path.c_str())) {
            throw LoadError("cannot decode PNG " + path.string() + ": " + p.img.message);
        }
        info.width = static_cast<int>(p.img.width);
        info.height = static_cast<int>(p.img.height);
        info.channels = static_cast<int>(PNG_IMAGE_SAMPLE_CHANNELS(p.img.format));
        return info;
    }
    if (fmt == Format::Jpeg) {
        FilePtr f(std::fopen(path.c_str(), "rb"));
        if (!f) throw LoadError("cannot open image " + path.string());
        std::vector<unsigned char> unused;
        std::string error;
        if (!decode_jpeg(f.get(), true, info, unused, error)) {
            throw LoadError("cannot decode JPEG " + path.string() + ": " + error);
        }
        return info;
    }
    throw LoadError("unsupported image format: " + path.string());
}

Image load_image(const fs::path& path) {
    const Raster8 r = read_raster(path, false);
    Image img(r.height, r.width);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = r.data[(static_cast<std::size_t>(y) * r.width + x) * 3 + c] / 255.0;
    return img;
}

AnomalyMask load_mask(const fs::path& path) {
    const Raster8 r = read_raster(path, true);
    AnomalyMask m(r.height, r.width);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = r.data[i] > 127 ? 1 : 0;
    return m;
}

void save_png(const fs::path& path, const Image& image) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(image.height()) * image.width() * 3);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<std::size_t>(y) * image.width() + x) * 3 + c] = to_u8(image.at(c, y, x));
    write_png(path, PNG_FORMAT_RGB, image.width(), image.height(), buf.data());
}

void save_png(const fs::path& path, const AnomalyMask& mask) {
    std::vector<unsigned char> buf(mask.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = mask.data[i] ? 255 : 0;
    write_png(path, PNG_FORMAT_GRAY, mask.width, mask.height, buf.data());
}

void save_png16(const fs::path& path, const ProbMap& map) {
    std::vector<png_uint_16> buf(map.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] = static_cast<png_uint_16>(std::lround(std::clamp(map.data[i], 0.0, 1.0) * 65535.0));
    }
    write_png(path, PNG_FORMAT_LINEAR_Y, map.width, map.height, buf.data());
}

ProbMap load_png16(const fs::path& path) {
    PngImage p;
    if (!png_image_begin_read_from_file(&p.img, path.c_str())) {
        throw LoadError("cannot decode PNG " + path.string() + ": " + p.img.message);
    }
    p.img.format = PNG_FORMAT_LINEAR_Y;
    std::vector<png_uint_16> buf(static_cast<std::size_t>(p.img.width) * p.img.height);
    if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr)) {
        throw LoadError("cannot decode PNG " + path.string() + ": " + p.img.message);
    }
    ProbMap m(static_cast<int>(p.img.height), static_cast<int>(p.img.width));
    for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i] / 65535.0;
    return m;
}

void save_npy(const fs::path& path, const ProbMap& map) {
    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                         std::to_string(map.height) + ", " + std::to_string(map.width) + "), }";
    // Magic (6) + version (2) + length (2) + header must be a multiple of 64.
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write " + path.string());
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
    out.write(len_bytes, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    static_assert(std::endian::native == std::endian::little, "npy writer assumes little-endian");
    out.write(reinterpret_cast<const char*>(map.data.data()),
              static_cast<std::streamsize>(map.data.size() * sizeof(double)));
}

ProbMap load_npy(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0 || magic[6] != 1) {
        throw LoadError("not an npy v1 file: " + path.string());
    }
    unsigned char len_bytes[2];
    in.read(reinterpret_cast<char*>(len_bytes), 2);
    std::string header(static_cast<std::size_t>(len_bytes[0] | (len_bytes[1] << 8)), '\0');
    in.read(header.data(), static_cast<std::streamsize>(header.size()));
    if (header.find("'<f8'") == std::string::npos ||
        header.find("'fortran_order': False") == std::string::npos) {
        throw LoadError("npy file is not C-ordered float64: " + path.string());
    }
    const auto open = header.find("'shape': (");
    if (open == std::string::npos) throw LoadError("npy header lacks shape: " + path.string());
    int h = 0, w = 0;
    char comma = 0;
    std::istringstream shape(header.substr(open + 10));
    shape >> h >> comma >> w;
    if (!shape || comma != ',' || h <= 0 || w <= 0) {
        throw LoadError("npy map must be two-dimensional: " + path.string());
    }
    ProbMap m(h, w);
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw LoadError("truncated npy file: " + path.string());
    return m;
}

Image heatmap_overlay(const Image& image, const ProbMap& map) {
    const ProbMap m = resize_bilinear(map, image.height(), image.width());
    Image out(image.height(), image.width());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const double p = std::clamp(m.at(y, x), 0.0, 1.0);
            // Piecewise-linear blue -> cyan -> yellow -> red ramp.
            const double r = std::clamp(2.0 * p - 0.5, 0.0, 1.0);
            const double g = std::clamp(p < 0.5 ? 2.0 * p : 2.0 - 2.0 * p, 0.0, 1.0);
            const double b = std::clamp(1.0 - 2.0 * p, 0.0, 1.0);
            const std::array<double, 3> color{r, g, b};
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = 0.5 * image.at(c, y, x) + 0.5 * color[c];
        }
    }
    return out;
}

}  // namespace pfadseg
