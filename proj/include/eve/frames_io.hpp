#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eve/tensor.hpp"

namespace eve {

// Images are (3, H, W) RGB in [0, 1].
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_image(const std::vector<std::uint8_t>& bytes);

// A directory of numbered image files (sorted by file name) or a video file.
std::vector<Image> read_video(const std::filesystem::path& source);

// First frame of a frame directory, single image or video file.
Image read_first_frame(const std::filesystem::path& source);

// Image files of a frame directory in playback order.
std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir);

// Centre-crop to a square, then area-resize to resolution x resolution.
Image preprocess_frame(const Image& frame, int resolution);

}  // namespace eve
