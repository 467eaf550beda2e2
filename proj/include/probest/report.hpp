#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace probest {

/**
 * Minimal JSON emitter with insertion-ordered keys and all floating-point
 * values printed with 17 significant digits, so identical runs serialize
 * to identical bytes.
 */
class JsonWriter {
public:
    JsonWriter& begin_object();
    JsonWriter& end_object();
    JsonWriter& begin_array();
    JsonWriter& end_array();
    JsonWriter& key(const std::string& k);
    JsonWriter& value(double v);
    JsonWriter& value(const std::string& v);
    JsonWriter& value(const char* v);
    JsonWriter& value(bool v);
    JsonWriter& value(long v);
    JsonWriter& value(int v) { return value(static_cast<long>(v)); }

    JsonWriter& kv(const std::string& k, double v) { return key(k).value(v); }
    JsonWriter& kv(const std::string& k, const std::string& v) { return key(k).value(v); }
    JsonWriter& kv(const std::string& k, const char* v) { return key(k).value(v); }
    JsonWriter& kv(const std::string& k, bool v) { return key(k).value(v); }
    JsonWriter& kv(const std::string& k, long v) { return key(k).value(v); }
    JsonWriter& kv(const std::string& k, int v) { return key(k).value(v); }

    std::string str() const { return out_.str(); }

    static std::string format_double(double v);

private:
    void comma();
    std::ostringstream out_;
    std::vector<bool> first_in_scope_{true};
    bool pending_key_ = false;
};

void write_text_file(const std::string& path, const std::string& content);

}  // namespace probest
