#include "image_io.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include "errors.hpp"

namespace oneshot {

namespace {

RawImage decode_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;

    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError("failed to read PNG header: " + path + " (" + image.message + ")");

    // Keep gray files gray so no color conversion happens outside our own
    // luminance formula.
    const bool is_color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = is_color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    RawImage out;
    out.width = static_cast<int>(image.width);
    out.height = static_cast<int>(image.height);
    out.channels = is_color ? 3 : 1;
    out.pixels.resize(PNG_IMAGE_SIZE(image));

    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("failed to decode PNG: " + path + " (" + image.message + ")");
    }
    return out;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    longjmp(err->jump, 1);
}

RawImage decode_jpeg(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), std::fclose);
    if (!file) throw IoError("cannot open file: " + path);

    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("failed to decode JPEG: " + path + " (" + jerr.message + ")");
    }

    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);

    RawImage out;
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.channels = cinfo.output_components;
    out.pixels.resize(static_cast<size_t>(out.width) * out.height * out.channels);

    const size_t stride = static_cast<size_t>(out.width) * out.channels;
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + stride * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

}  // namespace

RawImage decode_image(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), std::fclose);
    if (!file) throw IoError("cannot open file: " + path);
    unsigned char sig[8] = {0};
    const size_t got = std::fread(sig, 1, sizeof(sig), file.get());
    file.reset();

    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (got >= 8 && std::memcmp(sig, png_sig, 8) == 0) return decode_png(path);
    if (got >= 2 && sig[0] == 0xff && sig[1] == 0xd8) return decode_jpeg(path);
    throw IoError("unrecognized image format (not PNG or JPEG): " + path);
}

void write_gray_png(const std::string& path, int width, int height, const uint8_t* pixels) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, pixels, 0, nullptr))
        throw IoError("failed to write PNG: " + path + " (" + image.message + ")");
}

Tensor to_gray_tensor(const RawImage& img) {
    Tensor out({1, img.height, img.width});
    const size_t n = static_cast<size_t>(img.width) * img.height;
    if (img.channels == 1) {
        for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(img.pixels[i] / 255.0);
    } else if (img.channels == 3) {
        for (size_t i = 0; i < n; ++i) {
            const double r = img.pixels[3 * i], g = img.pixels[3 * i + 1], b = img.pixels[3 * i + 2];
            out[i] = static_cast<float>((0.299 * r + 0.587 * g + 0.114 * b) / 255.0);
        }
    } else {
        throw IoError("unsupported channel count " + std::to_string(img.channels));
    }
    return out;
}

Tensor resize_bilinear(const Tensor& gray, int target_size) {
    if (gray.ndim() != 3 || gray.dim(0) != 1)
        throw std::invalid_argument("resize_bilinear expects [1,H,W], got " + gray.shape_str());
    const int h = gray.dim(1), w = gray.dim(2);
    if (h == target_size && w == target_size) return gray;

    Tensor out({1, target_size, target_size});
    const double sy = static_cast<double>(h) / target_size;
    const double sx = static_cast<double>(w) / target_size;
    const float* src = gray.data();
    float* dst = out.data();
    for (int y = 0; y < target_size; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_size; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            const double v00 = src[static_cast<size_t>(y0) * w + x0];
            const double v01 = src[static_cast<size_t>(y0) * w + x1];
            const double v10 = src[static_cast<size_t>(y1) * w + x0];
            const double v11 = src[static_cast<size_t>(y1) * w + x1];
            const double top = v00 + (v01 - v00) * wx;
            const double bot = v10 + (v11 - v10) * wx;
            dst[static_cast<size_t>(y) * target_size + x] = static_cast<float>(top + (bot - top) * wy);
        }
    }
    return out;
}

Tensor load_image_tensor(const std::string& path, int target_size) {
    return resize_bilinear(to_gray_tensor(decode_image(path)), target_size);
}

}  // namespace oneshot
