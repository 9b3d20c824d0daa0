#include "kairos/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "kairos/checkpoint.hpp"
#include "kairos/error.hpp"

namespace kairos {

namespace {

Image decode_png(std::span<const std::byte> bytes, const std::string& label) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DecodeError(label + ": " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image out;
  out.height = img.height;
  out.width = img.width;
  out.channels = gray ? 1 : 3;
  if (out.height == 0 || out.width == 0) {
    png_image_free(&img);
    throw DecodeError(label + ": empty PNG");
  }
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  // No background colour: alpha is composited onto the zeroed buffer (black).
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DecodeError(label + ": " + msg);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Corrupt-data warnings (level -1), e.g. a truncated scan, are fatal.
extern "C" void on_jpeg_message(j_common_ptr cinfo, int level) {
  if (level < 0) on_jpeg_error(cinfo);
}

Image decode_jpeg(std::span<const std::byte> bytes, const std::string& label) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  err.mgr.emit_message = on_jpeg_message;
  err.message[0] = '\0';

  Image out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(label + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.height = cinfo.output_height;
  out.width = cinfo.output_width;
  out.channels = static_cast<std::size_t>(cinfo.output_components);
  out.pixels.resize(out.height * out.width * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + cinfo.output_scanline * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

Image decode_image(std::span<const std::byte> bytes, const std::string& label) {
  static constexpr unsigned char kPng[] = {0x89, 'P', 'N', 'G'};
  static constexpr unsigned char kJpeg[] = {0xFF, 0xD8, 0xFF};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, sizeof kPng) == 0) {
    return decode_png(bytes, label);
  }
  if (bytes.size() >= 3 && std::memcmp(bytes.data(), kJpeg, sizeof kJpeg) == 0) {
    return decode_jpeg(bytes, label);
  }
  throw DecodeError(label + ": unsupported image format (expected PNG or JPEG)");
}

Image load_image(const std::filesystem::path& path) {
  std::vector<std::byte> bytes;
  try {
    bytes = checkpoint::read_file(path);
  } catch (const IoError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
  return decode_image(bytes, path.string());
}

}  // namespace kairos
