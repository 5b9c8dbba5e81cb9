#include "bsbm/serialize.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace bsbm {

std::string double_to_string(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double string_to_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw DataError("bad numeric string: '" + s + "'");
    return v;
}

nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json arr = nlohmann::json::array();
    const double* d = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) arr.push_back(double_to_string(d[i]));
    return arr;
}

Matrix matrix_from_json(const nlohmann::json& j, int rows, int cols) {
    if (!j.is_array() || j.size() != static_cast<std::size_t>(rows) * cols) {
        throw DataError("matrix payload has wrong length");
    }
    Matrix m(rows, cols);
    double* d = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) d[i] = string_to_double(j[i].get<std::string>());
    return m;
}

nlohmann::json net_to_json(const MlpNet& net) {
    nlohmann::json j;
    j["input_dim"] = net.input_dim;
    j["hidden_dim"] = net.hidden_dim;
    j["output_dim"] = net.output_dim;
    j["head"] = net.head == Head::Softplus ? "softplus" : "linear";
    j["trainable"] = net.trainable;
    const char* names[6] = {"w1", "b1", "w2", "b2", "w3", "b3"};
    auto params = net.params();
    for (int i = 0; i < 6; ++i) j["params"][names[i]] = matrix_to_json(*params[i]);
    return j;
}

MlpNet net_from_json(const nlohmann::json& j) {
    MlpNet net;
    try {
        net.input_dim = j.at("input_dim").get<int>();
        net.hidden_dim = j.at("hidden_dim").get<int>();
        net.output_dim = j.at("output_dim").get<int>();
        const std::string head = j.at("head").get<std::string>();
        if (head == "softplus") {
            net.head = Head::Softplus;
        } else if (head == "linear") {
            net.head = Head::Linear;
        } else {
            throw DataError("unknown head kind '" + head + "'");
        }
        net.trainable = j.at("trainable").get<bool>();
        const auto& p = j.at("params");
        net.w1 = matrix_from_json(p.at("w1"), net.input_dim, net.hidden_dim);
        net.b1 = matrix_from_json(p.at("b1"), 1, net.hidden_dim);
        net.w2 = matrix_from_json(p.at("w2"), net.hidden_dim, net.hidden_dim);
        net.b2 = matrix_from_json(p.at("b2"), 1, net.hidden_dim);
        net.w3 = matrix_from_json(p.at("w3"), net.hidden_dim, net.output_dim);
        net.b3 = matrix_from_json(p.at("b3"), 1, net.output_dim);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("net payload malformed: ") + e.what());
    }
    return net;
}

nlohmann::json optim_to_json(const OptimState& s) {
    nlohmann::json j;
    j["kind"] = s.kind == OptimKind::AdamW ? "adamw" : "adam";
    j["step"] = s.step;
    j["lr"] = double_to_string(s.lr);
    j["beta1"] = double_to_string(s.beta1);
    j["beta2"] = double_to_string(s.beta2);
    j["eps"] = double_to_string(s.eps);
    j["weight_decay"] = double_to_string(s.weight_decay);
    j["m"] = nlohmann::json::array();
    j["v"] = nlohmann::json::array();
    j["shapes"] = nlohmann::json::array();
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        j["shapes"].push_back({s.m[i].rows(), s.m[i].cols()});
        j["m"].push_back(matrix_to_json(s.m[i]));
        j["v"].push_back(matrix_to_json(s.v[i]));
    }
    return j;
}

OptimState optim_from_json(const nlohmann::json& j) {
    OptimState s;
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "adamw") {
            s.kind = OptimKind::AdamW;
        } else if (kind == "adam") {
            s.kind = OptimKind::Adam;
        } else {
            throw DataError("unknown optimizer kind '" + kind + "'");
        }
        s.step = j.at("step").get<long>();
        s.lr = string_to_double(j.at("lr").get<std::string>());
        s.beta1 = string_to_double(j.at("beta1").get<std::string>());
        s.beta2 = string_to_double(j.at("beta2").get<std::string>());
        s.eps = string_to_double(j.at("eps").get<std::string>());
        s.weight_decay = string_to_double(j.at("weight_decay").get<std::string>());
        const auto& shapes = j.at("shapes");
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            const int r = shapes[i][0].get<int>();
            const int c = shapes[i][1].get<int>();
            s.m.push_back(matrix_from_json(j.at("m")[i], r, c));
            s.v.push_back(matrix_from_json(j.at("v")[i], r, c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("optimizer payload malformed: ") + e.what());
    }
    return s;
}

nlohmann::json land_metric_to_json(const LandMetric& m, const std::string& anchors_file) {
    nlohmann::json j;
    j["kind"] = "land";
    j["sigma"] = double_to_string(m.sigma());
    j["eps"] = double_to_string(m.eps());
    j["anchors_file"] = anchors_file;
    return j;
}

nlohmann::json rbf_metric_to_json(const RbfMetric& m) {
    nlohmann::json j;
    j["kind"] = "rbf";
    j["eps"] = double_to_string(m.eps());
    j["kappa"] = double_to_string(m.kappa());
    j["n_centers"] = m.centers().rows();
    j["dim"] = m.centers().cols();
    j["centers"] = matrix_to_json(m.centers());
    j["lambdas"] = matrix_to_json(m.lambdas());
    j["omegas"] = matrix_to_json(m.omegas());
    return j;
}

RbfMetric rbf_metric_from_json(const nlohmann::json& j) {
    try {
        if (j.at("kind").get<std::string>() != "rbf") throw DataError("not an rbf metric file");
        const int nc = j.at("n_centers").get<int>();
        const int d = j.at("dim").get<int>();
        return RbfMetric(matrix_from_json(j.at("centers"), nc, d),
                         matrix_from_json(j.at("lambdas"), nc, d),
                         matrix_from_json(j.at("omegas"), nc, d),
                         string_to_double(j.at("kappa").get<std::string>()),
                         string_to_double(j.at("eps").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("rbf metric payload malformed: ") + e.what());
    }
}

void write_json_file(const nlohmann::json& j, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot open for writing: " + tmp);
        out << j.dump(1) << "\n";
        if (!out) throw DataError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("rename failed for " + path + ": " + ec.message());
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("JSON parse error in " + path + ": " + e.what());
    }
    return j;
}

std::string file_content_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof buf)) break;
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

}  // namespace bsbm
