#include "lasr/cli.hpp"

int main(int argc, char** argv) { return lasr::run(argc, argv); }
