#include "coms2t/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <zlib.h>

namespace coms2t {

Canvas::Canvas(std::size_t width, std::size_t height, std::uint32_t background)
    : width_(width), height_(height), pixels_(width * height * 3) {
    for (std::size_t i = 0; i < width_ * height_; ++i) {
        pixels_[3 * i] = static_cast<std::uint8_t>(background >> 16);
        pixels_[3 * i + 1] = static_cast<std::uint8_t>(background >> 8);
        pixels_[3 * i + 2] = static_cast<std::uint8_t>(background);
    }
}

void Canvas::set(std::size_t x, std::size_t y, std::uint32_t rgb) {
    if (x >= width_ || y >= height_) return;
    std::size_t i = (y * width_ + x) * 3;
    pixels_[i] = static_cast<std::uint8_t>(rgb >> 16);
    pixels_[i + 1] = static_cast<std::uint8_t>(rgb >> 8);
    pixels_[i + 2] = static_cast<std::uint8_t>(rgb);
}

void Canvas::line(double x0, double y0, double x1, double y1, std::uint32_t rgb) {
    double dx = x1 - x0, dy = y1 - y0;
    int steps = static_cast<int>(std::max(std::fabs(dx), std::fabs(dy))) + 1;
    for (int s = 0; s <= steps; ++s) {
        double f = static_cast<double>(s) / steps;
        auto x = static_cast<long>(std::lround(x0 + f * dx));
        auto y = static_cast<long>(std::lround(y0 + f * dy));
        if (x >= 0 && y >= 0) set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), rgb);
    }
}

void Canvas::rect(std::size_t x, std::size_t y, std::size_t w, std::size_t h, std::uint32_t rgb) {
    for (std::size_t j = 0; j < h; ++j)
        for (std::size_t i = 0; i < w; ++i) set(x + i, y + j, rgb);
}

void Canvas::frame(std::size_t x, std::size_t y, std::size_t w, std::size_t h,
                   std::uint32_t rgb) {
    for (std::size_t i = 0; i < w; ++i) {
        set(x + i, y, rgb);
        set(x + i, y + h - 1, rgb);
    }
    for (std::size_t j = 0; j < h; ++j) {
        set(x, y + j, rgb);
        set(x + w - 1, y + j, rgb);
    }
}

namespace {
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void write_chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> buf;
    put_u32(buf, static_cast<std::uint32_t>(data.size()));
    out.write(reinterpret_cast<const char*>(buf.data()), 4);
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.write(reinterpret_cast<const char*>(body.data()),
              static_cast<std::streamsize>(body.size()));
    std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, body.data(), static_cast<uInt>(body.size())));
    buf.clear();
    put_u32(buf, crc);
    out.write(reinterpret_cast<const char*>(buf.data()), 4);
}
}  // namespace

void Canvas::save_png(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ReportError("canvas: cannot open " + path);
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width_));
    put_u32(ihdr, static_cast<std::uint32_t>(height_));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    raw.reserve(height_ * (1 + width_ * 3));
    for (std::size_t y = 0; y < height_; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), pixels_.begin() + static_cast<std::ptrdiff_t>(y * width_ * 3),
                   pixels_.begin() + static_cast<std::ptrdiff_t>((y + 1) * width_ * 3));
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> idat(bound);
    if (::compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw ReportError("canvas: zlib compression failed");
    idat.resize(bound);
    write_chunk(out, "IDAT", idat);
    write_chunk(out, "IEND", {});
}

namespace {
std::string csv_twin(const std::string& png_path) {
    auto dot = png_path.rfind('.');
    return (dot == std::string::npos ? png_path : png_path.substr(0, dot)) + ".csv";
}
}  // namespace

void plot_lines(const std::string& png_path, const std::vector<Series>& series,
                const std::vector<std::size_t>& markers) {
    std::size_t n = 0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (n == 0) throw ReportError("plot_lines: no data");
    if (hi <= lo) hi = lo + 1.0;

    const std::size_t W = 640, H = 400, ML = 50, MR = 20, MT = 20, MB = 40;
    Canvas c(W, H);
    c.frame(ML, MT, W - ML - MR, H - MT - MB, 0x000000);
    auto px = [&](double i) {
        return ML + 1 + (W - ML - MR - 2) * (n > 1 ? i / static_cast<double>(n - 1) : 0.0);
    };
    auto py = [&](double v) { return MT + 1 + (H - MT - MB - 2) * (1.0 - (v - lo) / (hi - lo)); };
    for (auto m : markers)
        if (m < n) c.line(px(static_cast<double>(m)), MT, px(static_cast<double>(m)), H - MB,
                          0xaaaaaa);
    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& sr = series[s];
        for (std::size_t i = 0; i + 1 < sr.values.size(); ++i)
            c.line(px(static_cast<double>(i)), py(sr.values[i]), px(static_cast<double>(i + 1)),
                   py(sr.values[i + 1]), sr.color);
        c.rect(ML + 8 + 70 * s, 6, 10, 10, sr.color);  // legend swatch, CSV names the series
    }
    c.save_png(png_path);

    std::ofstream csv(csv_twin(png_path));
    if (!csv) throw ReportError("plot_lines: cannot open csv");
    csv << "index";
    for (const auto& s : series) csv << "," << s.name;
    csv << "\n";
    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
        csv << i;
        for (const auto& s : series) {
            csv << ",";
            if (i < s.values.size()) {
                std::snprintf(buf, sizeof(buf), "%.17g", s.values[i]);
                csv << buf;
            }
        }
        csv << "\n";
    }
}

void plot_heatmap(const std::string& png_path, const NDArray& matrix,
                  const std::vector<std::string>& row_labels) {
    if (matrix.rank() != 2 || matrix.size() == 0)
        throw ReportError("plot_heatmap: need a non-empty matrix");
    std::size_t R = matrix.dim(0), C = matrix.dim(1);
    double amax = 0.0;
    for (std::size_t i = 0; i < matrix.size(); ++i) amax = std::max(amax, std::fabs(matrix[i]));
    if (amax == 0.0) amax = 1.0;

    std::size_t cell = std::max<std::size_t>(4, 256 / std::max(R, C));
    Canvas c(C * cell + 2, R * cell + 2);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t col = 0; col < C; ++col) {
            double v = matrix.at(r, col) / amax;  // [-1, 1]
            std::uint8_t red, green, blue;
            if (v >= 0) {  // white -> red
                red = 255;
                green = blue = static_cast<std::uint8_t>(255 * (1.0 - v));
            } else {  // white -> blue
                blue = 255;
                red = green = static_cast<std::uint8_t>(255 * (1.0 + v));
            }
            c.rect(1 + col * cell, 1 + r * cell, cell, cell,
                   (static_cast<std::uint32_t>(red) << 16) |
                       (static_cast<std::uint32_t>(green) << 8) | blue);
        }
    c.frame(0, 0, C * cell + 2, R * cell + 2, 0x000000);
    c.save_png(png_path);

    std::ofstream csv(csv_twin(png_path));
    if (!csv) throw ReportError("plot_heatmap: cannot open csv");
    csv << "row";
    for (std::size_t col = 0; col < C; ++col) csv << ",c" << col;
    csv << "\n";
    char buf[64];
    for (std::size_t r = 0; r < R; ++r) {
        if (r < row_labels.size())
            csv << row_labels[r];
        else
            csv << r;
        for (std::size_t col = 0; col < C; ++col) {
            std::snprintf(buf, sizeof(buf), "%.17g", matrix.at(r, col));
            csv << "," << buf;
        }
        csv << "\n";
    }
}

}  // namespace coms2t
