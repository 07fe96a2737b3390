#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include <jpeglib.h>

#include "advmark/distortion.hpp"

namespace advmark {

namespace {

struct ErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void on_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<ErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

std::vector<unsigned char> compress(const Image& x, int n, int quality, bool subsample) {
  jpeg_compress_struct cinfo{};
  ErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_error;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw FormatError("libjpeg compression failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(x.w());
  cinfo.image_height = static_cast<JDIMENSION>(x.h());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  if (!subsample) {
    for (int c = 0; c < 3; ++c) {
      cinfo.comp_info[c].h_samp_factor = 1;
      cinfo.comp_info[c].v_samp_factor = 1;
    }
  }
  cinfo.dct_method = JDCT_FLOAT;
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<unsigned char> row(static_cast<std::size_t>(x.w()) * 3);
  while (cinfo.next_scanline < cinfo.image_height) {
    const int y = static_cast<int>(cinfo.next_scanline);
    for (int xx = 0; xx < x.w(); ++xx)
      for (int c = 0; c < 3; ++c)
        row[xx * 3 + c] = static_cast<unsigned char>(std::lround(std::clamp(x(n, c, y, xx), 0.0f, 1.0f) * 255.0f));
    JSAMPROW ptr = row.data();
    jpeg_write_scanlines(&cinfo, &ptr, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<unsigned char> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

Image decompress(const std::vector<unsigned char>& bytes) {
  jpeg_decompress_struct cinfo{};
  ErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_error;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError("libjpeg decompression failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  cinfo.dct_method = JDCT_FLOAT;
  jpeg_start_decompress(&cinfo);
  Image out(Shape{1, 3, static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width)});
  std::vector<unsigned char> row(static_cast<std::size_t>(cinfo.output_width) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = static_cast<int>(cinfo.output_scanline);
    JSAMPROW ptr = row.data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
    for (int xx = 0; xx < out.w(); ++xx)
      for (int c = 0; c < 3; ++c) out(0, c, y, xx) = row[xx * 3 + c] / 255.0f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Image jpeg_codec(const Image& x, int quality, bool subsample) {
  if (quality < 1 || quality > 100) throw ParameterError("JPEG quality must be in 1..100");
  if (x.c() != 3) throw DimensionError("jpeg_codec needs 3-channel images");
  Image out(x.shape());
  const std::size_t per = x.shape().sample_size();
  for (int n = 0; n < x.n(); ++n) {
    const Image one = decompress(compress(x, n, quality, subsample));
    std::copy(one.data(), one.data() + per, out.data() + n * per);
  }
  return out;
}

Image decode_jpeg(const std::vector<unsigned char>& bytes) { return decompress(bytes); }

std::vector<unsigned char> encode_jpeg(const Image& x, int quality) {
  if (quality < 1 || quality > 100) throw ParameterError("JPEG quality must be in 1..100");
  return compress(x, 0, quality, true);
}

}  // namespace advmark
