#include "xpd/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

namespace xpd::io {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr open_or_throw(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// Rows are passed as big-endian byte buffers, as libpng expects.
void write_rows(const std::filesystem::path& path, int rows, int cols, int bit_depth, int color_type,
                const std::vector<uint8_t>& bytes, size_t row_bytes) {
  FilePtr f = open_or_throw(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < rows; ++r)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<size_t>(r) * row_bytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct Decoded {
  int rows = 0, cols = 0, bit_depth = 0, color_type = 0;
  size_t row_bytes = 0;
  std::vector<uint8_t> bytes;
};

Decoded read_rows(const std::filesystem::path& path) {
  FilePtr f = open_or_throw(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG read failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  Decoded d;
  d.cols = static_cast<int>(png_get_image_width(png, info));
  d.rows = static_cast<int>(png_get_image_height(png, info));
  d.bit_depth = png_get_bit_depth(png, info);
  d.color_type = png_get_color_type(png, info);
  d.row_bytes = png_get_rowbytes(png, info);
  d.bytes.resize(d.row_bytes * static_cast<size_t>(d.rows));
  for (int r = 0; r < d.rows; ++r) png_read_row(png, d.bytes.data() + static_cast<size_t>(r) * d.row_bytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

}  // namespace

void write_png8(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw IoError("write_png8: 1 or 3 channels supported");
  if (image.data.size() != static_cast<size_t>(image.rows) * image.cols * image.channels)
    throw ShapeError("write_png8: buffer size mismatch");
  write_rows(path, image.rows, image.cols, 8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
             image.data, static_cast<size_t>(image.cols) * image.channels);
}

Image8 read_png8(const std::filesystem::path& path) {
  Decoded d = read_rows(path);
  if (d.bit_depth != 8 || (d.color_type != PNG_COLOR_TYPE_GRAY && d.color_type != PNG_COLOR_TYPE_RGB))
    throw IoError("read_png8: expected 8-bit gray or RGB: " + path.string());
  Image8 img{d.rows, d.cols, d.color_type == PNG_COLOR_TYPE_RGB ? 3 : 1, std::move(d.bytes)};
  return img;
}

void write_png16(const std::filesystem::path& path, const Grid2<uint16_t>& image) {
  std::vector<uint8_t> bytes(image.size() * 2);
  for (size_t i = 0; i < image.size(); ++i) {
    bytes[2 * i] = static_cast<uint8_t>(image[i] >> 8);
    bytes[2 * i + 1] = static_cast<uint8_t>(image[i] & 0xff);
  }
  write_rows(path, image.rows(), image.cols(), 16, PNG_COLOR_TYPE_GRAY, bytes, static_cast<size_t>(image.cols()) * 2);
}

Grid2<uint16_t> read_png16(const std::filesystem::path& path) {
  Decoded d = read_rows(path);
  if (d.bit_depth != 16 || d.color_type != PNG_COLOR_TYPE_GRAY)
    throw IoError("read_png16: expected 16-bit gray: " + path.string());
  Grid2<uint16_t> img(d.rows, d.cols);
  for (size_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<uint16_t>((d.bytes[2 * i] << 8) | d.bytes[2 * i + 1]);
  return img;
}

}  // namespace xpd::io
