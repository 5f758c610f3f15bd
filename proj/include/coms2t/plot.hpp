#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coms2t/ndarray.hpp"

namespace coms2t {

/// RGB raster with simple drawing primitives, written out as PNG.
class Canvas {
public:
    Canvas(std::size_t width, std::size_t height, std::uint32_t background = 0xffffff);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }

    void set(std::size_t x, std::size_t y, std::uint32_t rgb);
    void line(double x0, double y0, double x1, double y1, std::uint32_t rgb);
    void rect(std::size_t x, std::size_t y, std::size_t w, std::size_t h, std::uint32_t rgb);
    void frame(std::size_t x, std::size_t y, std::size_t w, std::size_t h, std::uint32_t rgb);

    void save_png(const std::string& path) const;

private:
    std::size_t width_, height_;
    std::vector<std::uint8_t> pixels_;  // RGB, row-major
};

/// Line chart: one polyline per series over a shared x index; vertical
/// markers highlight stage boundaries. Data is also emitted as CSV next to
/// the PNG (same stem) so every plotted point has a matching row.
struct Series {
    std::string name;
    std::vector<double> values;
    std::uint32_t color = 0x1f77b4;
};

void plot_lines(const std::string& png_path, const std::vector<Series>& series,
                const std::vector<std::size_t>& markers = {});

/// Heatmap of a [rows, cols] matrix (blue-white-red around 0), with CSV twin.
void plot_heatmap(const std::string& png_path, const NDArray& matrix,
                  const std::vector<std::string>& row_labels = {});

}  // namespace coms2t
