#include "pat/image.hpp"

#include <fstream>

#include <json.hpp>

#include "pat/io_bytes.hpp"

namespace pat {

using nlohmann::ordered_json;

void save_image(const std::string& path, const Image& img,
                const std::string& provenance_json, double extent_m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(msg("cannot open ", path, " for writing"));

    ordered_json header;
    header["shape"] = {img.h, img.w};
    header["dtype"] = "f32";
    header["extent_m"] = extent_m;
    header["provenance"] = ordered_json::parse(provenance_json);
    const std::string hs = header.dump();

    io::write_bytes(os, "PATIMG01", 8);
    io::write_u32(os, std::uint32_t(hs.size()));
    io::write_bytes(os, hs.data(), hs.size());
    io::write_f32s(os, img.px.data(), img.px.size());
    if (!os) throw IoError(msg("write failed for ", path));
}

Image load_image(const std::string& path, std::string* provenance_json) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(msg("cannot open ", path));
    io::expect_magic(is, "PATIMG01", path);
    const auto hlen = io::read_u32(is);
    const std::string hs = io::read_string(is, hlen);
    ordered_json header;
    try {
        header = ordered_json::parse(hs);
    } catch (const std::exception& e) {
        throw IoError(msg(path, ": bad header JSON: ", e.what()));
    }
    if (header.value("dtype", "") != "f32") {
        throw IoError(msg(path, ": unsupported dtype '", header.value("dtype", ""), "'"));
    }
    const auto shape = header.at("shape");
    Image img(shape.at(0).get<int>(), shape.at(1).get<int>());
    io::read_bytes(is, img.px.data(), img.px.size() * sizeof(float));
    if (provenance_json && header.contains("provenance")) {
        *provenance_json = header["provenance"].dump();
    }
    return img;
}

} // namespace pat
