#include "resvit/cli.hpp"

int main(int argc, char** argv) {
    return resvit::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
