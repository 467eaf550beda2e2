#include "probest/report.hpp"

#include <cmath>
#include <fstream>

#include "probest/common.hpp"

namespace probest {

std::string JsonWriter::format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void JsonWriter::comma() {
    if (pending_key_) {
        pending_key_ = false;
        return;
    }
    if (!first_in_scope_.back()) out_ << ",";
    first_in_scope_.back() = false;
}

JsonWriter& JsonWriter::begin_object() {
    comma();
    out_ << "{";
    first_in_scope_.push_back(true);
    return *this;
}

JsonWriter& JsonWriter::end_object() {
    out_ << "}";
    first_in_scope_.pop_back();
    return *this;
}

JsonWriter& JsonWriter::begin_array() {
    comma();
    out_ << "[";
    first_in_scope_.push_back(true);
    return *this;
}

JsonWriter& JsonWriter::end_array() {
    out_ << "]";
    first_in_scope_.pop_back();
    return *this;
}

JsonWriter& JsonWriter::key(const std::string& k) {
    comma();
    out_ << "\"" << k << "\":";
    pending_key_ = true;
    return *this;
}

JsonWriter& JsonWriter::value(double v) {
    comma();
    if (std::isfinite(v))
        out_ << format_double(v);
    else
        out_ << "null";  // JSON has no inf/nan
    return *this;
}

JsonWriter& JsonWriter::value(const std::string& v) {
    comma();
    out_ << "\"";
    for (char c : v) {
        switch (c) {
            case '"': out_ << "\\\""; break;
            case '\\': out_ << "\\\\"; break;
            case '\n': out_ << "\\n"; break;
            case '\t': out_ << "\\t"; break;
            default: out_ << c;
        }
    }
    out_ << "\"";
    return *this;
}

JsonWriter& JsonWriter::value(const char* v) { return value(std::string(v)); }

JsonWriter& JsonWriter::value(bool v) {
    comma();
    out_ << (v ? "true" : "false");
    return *this;
}

JsonWriter& JsonWriter::value(long v) {
    comma();
    out_ << v;
    return *this;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::config, "cannot open output file " + path);
    f << content;
}

}  // namespace probest
