#include "pdforge/cli.hpp"

int main(int argc, char** argv) {
    return pdforge::cli::dispatch(argc, argv);
}
