class A {
public:
  int a;
  virtual void af() { a = 1; }
};
class B : public virtual A {
public:
  int b;
  virtual void bf() { b = 2; }
};
class C : public virtual A {
public:
  int c;
  virtual void cf() { c = 3; }
};
class D : public B, public C {
public:
  int d;
  virtual void df() { d = 4; }
};

class E : public D {
public:
  int e;
  virtual void ef() { e = 5; }
};

int main() {
  A a; B b; C c; D d; E e;
  a.af(); b.bf(); c.cf(); d.df(); e.ef();
  return 0;
}
