class A {
public:
  int a;
  virtual void af() { a = 1; }
};
class B {
public:
  int b;
  virtual void bf() { b = 2; }
};
class C {
public:
  int c;
  virtual void cf() { c = 3; }
};
class D : public virtual A, public virtual B, public virtual C {
public:
  int d;
  virtual void df() { d = 4; }
};

int main() {
  D d;
  d.df();
  return 0;
}
