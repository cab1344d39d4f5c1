class A {
public:
  int a;
  virtual void af() { a = 1; }
};
// B is abstract and never constructed on its own, so its complete-object
// constructor and regular vtable are never emitted.
class B : public virtual A {
public:
  int b;
  virtual void bf() = 0;
};
class C : public virtual A {
public:
  int c;
  virtual void cf() { c = 3; }
};
class D : public B, public C {
public:
  int d;
  virtual void bf() { b = 2; }
  virtual void df() { d = 4; }
};
// R is declared but never used: the compiler emits nothing for it.
class R : public virtual A {
public:
  int r;
  virtual void rf() { r = 5; }
};

int main() {
  A a; C c; D d;
  a.af(); c.cf(); d.df();
  return 0;
}
