#include "igi/image_io.hpp"

#include "igi/common.hpp"

#include <filesystem>
#include <fstream>

namespace igi {

void write_ppm(const std::string& path, const torch::Tensor& image) {
  require(image.dim() == 3 && image.size(0) == 3, "write_ppm expects a 3 x H x W image");
  const torch::Tensor bytes =
      (image.detach().to(torch::kFloat64).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << image.size(2) << ' ' << image.size(1) << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data_ptr<std::uint8_t>()), static_cast<std::streamsize>(bytes.numel()));
}

torch::Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("cannot open image: " + path);
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  in >> magic;
  auto skip_comments = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  skip_comments();
  in >> width;
  skip_comments();
  in >> height;
  skip_comments();
  in >> maxval;
  in.get();
  if (magic != "P6" || width <= 0 || height <= 0 || maxval != 255) throw InvalidArgument("unsupported PPM: " + path);
  torch::Tensor bytes = torch::empty({height, width, 3}, torch::kUInt8);
  in.read(reinterpret_cast<char*>(bytes.data_ptr<std::uint8_t>()), static_cast<std::streamsize>(bytes.numel()));
  if (!in) throw InvalidArgument("truncated PPM: " + path);
  return bytes.permute({2, 0, 1}).to(torch::kFloat32) / 255.0;
}

}  // namespace igi
