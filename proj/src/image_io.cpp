// SPDX-License-Identifier: Apache-2.0
// PNG and JPEG decoding for the profiler's photometric statistics.
#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <memory>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "nadl/error.hpp"
#include "nadl/profiler.hpp"

namespace nadl {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngImage {
  png_image image{};
  PngImage() { image.version = PNG_IMAGE_VERSION; }
  ~PngImage() { png_image_free(&image); }
};

Raster decode_png(const std::filesystem::path& path, bool header_only) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    fail(ErrorCode::Io, "cannot decode PNG '" + path.string() + "': " + png.image.message);
  }
  Raster r;
  r.width = static_cast<int>(png.image.width);
  r.height = static_cast<int>(png.image.height);
  const bool color = (png.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  r.channels = color ? 3 : 1;
  if (header_only) return r;
  png.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  r.pixels.resize(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, r.pixels.data(), 0, nullptr)) {
    fail(ErrorCode::Io, "cannot decode PNG '" + path.string() + "': " + png.image.message);
  }
  return r;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

// Kept free of C++ objects with destructors between setjmp and longjmp.
bool decode_jpeg_raw(std::FILE* file, bool header_only, Raster* out, char* message) {
  jpeg_decompress_struct info;
  JpegErrorManager err;
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  if (setjmp(err.jump)) {
    std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
    jpeg_destroy_decompress(&info);
    return false;
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file);
  jpeg_read_header(&info, TRUE);
  out->width = static_cast<int>(info.image_width);
  out->height = static_cast<int>(info.image_height);
  out->channels = info.num_components == 1 ? 1 : 3;
  if (!header_only) {
    info.out_color_space = out->channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&info);
    const std::size_t stride = static_cast<std::size_t>(info.output_width) * info.output_components;
    out->pixels.resize(stride * info.output_height);
    while (info.output_scanline < info.output_height) {
      JSAMPROW row = out->pixels.data() + stride * info.output_scanline;
      jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
  }
  jpeg_destroy_decompress(&info);
  return true;
}

Raster decode_jpeg(const std::filesystem::path& path, bool header_only) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
  Raster r;
  char message[JMSG_LENGTH_MAX] = {0};
  if (!decode_jpeg_raw(file.get(), header_only, &r, message)) {
    fail(ErrorCode::Io, "cannot decode JPEG '" + path.string() + "': " + message);
  }
  return r;
}

Raster decode(const std::filesystem::path& path, bool header_only) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return decode_png(path, header_only);
  if (ext == ".jpg" || ext == ".jpeg") return decode_jpeg(path, header_only);
  fail(ErrorCode::Io, "unsupported image format '" + path.string() + "'");
}

}  // namespace

Raster decode_image(const std::filesystem::path& path) { return decode(path, false); }

std::pair<int, int> read_image_dims(const std::filesystem::path& path) {
  const auto r = decode(path, true);
  return {r.width, r.height};
}

std::optional<std::filesystem::path> find_image(const std::filesystem::path& images_dir, const std::string& image_id) {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
    auto candidate = images_dir / (image_id + ext);
    if (std::filesystem::is_regular_file(candidate)) return candidate;
  }
  return std::nullopt;
}

}  // namespace nadl
