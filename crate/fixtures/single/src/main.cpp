class Base {
public:
  int x;
  virtual void f() { x = 1; }
};
class Derived : public Base {
public:
  int y;
  virtual void g() { y = 2; }
};

int main() {
  Base b; Derived d;
  b.f(); d.g();
  return 0;
}
