#include "bsbm/cloud.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace bsbm {

double sq_dist(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        s += diff * diff;
    }
    return s;
}

void write_cloud_csv(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    const int d = cloud.dim();
    if (d == 3) {
        out << "x,y,z\n";
    } else {
        for (int j = 0; j < d; ++j) out << (j ? "," : "") << "x" << j;
        out << "\n";
    }
    char buf[40];
    for (int i = 0; i < cloud.n(); ++i) {
        const double* p = cloud.points.row(i);
        for (int j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", p[j]);
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

PointCloud read_cloud_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file: " + path);

    std::vector<double> values;
    int cols = -1;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int c = 0;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw DataError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
            values.push_back(v);
            ++c;
        }
        if (cols == -1) {
            cols = c;
        } else if (c != cols) {
            throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(cols) + " columns, got " + std::to_string(c));
        }
    }
    if (cols <= 0 || values.empty()) throw DataError("no data rows in " + path);
    return PointCloud(Matrix::from_vector(values, static_cast<int>(values.size()) / cols, cols));
}

}  // namespace bsbm
